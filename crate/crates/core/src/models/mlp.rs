//! Small dense network for a scalar non-negative function of maturity.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Initial bias of the output unit. Larger values shrink the sensitivity of
/// alpha to every parameter, and with it the size of a fixed-rate step.
pub const OUTPUT_BIAS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    fn slope(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// Row-major `out x in` weights.
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub act: Activation,
}

impl DenseLayer {
    fn inputs(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }

    fn outputs(&self) -> usize {
        self.b.len()
    }

    fn n_params(&self) -> usize {
        self.outputs() * (self.inputs() + 1)
    }
}

/// `alpha(x) = output_scale * net(x / horizon)` where `net` ends in a relu, so
/// the output is non-negative for every input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpAlpha {
    pub layers: Vec<DenseLayer>,
    #[serde(default = "one")]
    pub input_scale: f64,
    #[serde(default = "one")]
    pub output_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl MlpAlpha {
    pub fn new(layers: Vec<DenseLayer>, input_scale: f64, output_scale: f64) -> Result<Self> {
        let net = Self { layers, input_scale, output_scale };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(format!("network: {m}")));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        if !(self.output_scale.is_finite() && self.output_scale >= 0.0) {
            return bad(format!("output scale must be >= 0, got {}", self.output_scale));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return bad(format!("input scale must be > 0, got {}", self.input_scale));
        }
        let mut width = 1;
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.w.len() != layer.b.len() || layer.w.iter().any(|row| row.len() != width) {
                return bad(format!("layer {k} has inconsistent shape"));
            }
            if layer.w.iter().flatten().chain(&layer.b).any(|v| !v.is_finite()) {
                return bad(format!("layer {k} has non-finite parameters"));
            }
            width = layer.outputs();
        }
        if width != 1 {
            return bad(format!("output width is {width}, expected 1"));
        }
        if self.layers.last().map(|l| l.act) != Some(Activation::Relu) {
            return bad("last layer must use relu to keep the output non-negative".into());
        }
        Ok(())
    }

    /// Three dense layers (tanh, relu, relu) whose output starts near `alpha0`.
    ///
    /// The last layer has bias [`OUTPUT_BIAS`] and small weights, and the
    /// network output is scaled by `alpha0 / OUTPUT_BIAS`.
    pub fn initialized<R: Rng + ?Sized>(width: usize, horizon: f64, alpha0: f64, rng: &mut R) -> Result<Self> {
        if width == 0 {
            return Err(Error::Domain("network width must be positive".into()));
        }
        if !(alpha0.is_finite() && alpha0 > 0.0) {
            return Err(Error::Domain(format!("initial alpha must be > 0, got {alpha0}")));
        }
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut draw = |s: f64| s * std_normal.sample(rng);
        let wf = width as f64;
        let l1 = DenseLayer {
            w: (0..width).map(|_| vec![draw(3.0)]).collect(),
            b: (0..width).map(|_| draw(1.0)).collect(),
            act: Activation::Tanh,
        };
        let l2 = DenseLayer {
            w: (0..width).map(|_| (0..width).map(|_| draw(1.0 / wf.sqrt())).collect()).collect(),
            b: vec![0.1; width],
            act: Activation::Relu,
        };
        let l3 = DenseLayer {
            w: vec![(0..width).map(|_| draw(0.1 / wf.sqrt())).collect()],
            b: vec![OUTPUT_BIAS],
            act: Activation::Relu,
        };
        Self::new(vec![l1, l2, l3], 1.0 / horizon, alpha0 / OUTPUT_BIAS)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::n_params).sum()
    }

    /// Parameters flattened layer by layer as `[W (row-major), b]`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter().flatten());
            out.extend(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.n_params(), params.len())));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for v in l.w.iter_mut().flatten().chain(l.b.iter_mut()) {
                *v = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        let mut a = vec![x * self.input_scale];
        for l in &self.layers {
            a = l
                .w
                .iter()
                .zip(&l.b)
                .map(|(row, b)| l.act.apply(row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + b))
                .collect();
        }
        self.output_scale * a[0]
    }

    /// Adds `upstream * d forward(x) / d params` into `grad`.
    pub fn accumulate_gradient(&self, x: f64, upstream: f64, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.n_params());
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut a = vec![x * self.input_scale];
        for l in &self.layers {
            let z: Vec<f64> = l
                .w
                .iter()
                .zip(&l.b)
                .map(|(row, b)| row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + b)
                .collect();
            let next = z.iter().map(|&zi| l.act.apply(zi)).collect();
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }

        let mut delta_out = vec![upstream * self.output_scale];
        let mut offset = grad.len();
        for (k, l) in self.layers.iter().enumerate().rev() {
            offset -= l.n_params();
            let outs = l.outputs();
            let ins = l.inputs();
            let post: Vec<f64> = pre[k].iter().map(|&z| l.act.apply(z)).collect();
            let delta: Vec<f64> = (0..outs)
                .map(|o| delta_out[o] * l.act.slope(pre[k][o], post[o]))
                .collect();
            let (gw, gb) = grad[offset..offset + l.n_params()].split_at_mut(outs * ins);
            for o in 0..outs {
                if delta[o] == 0.0 {
                    continue;
                }
                for i in 0..ins {
                    gw[o * ins + i] += delta[o] * inputs[k][i];
                }
                gb[o] += delta[o];
            }
            if k > 0 {
                delta_out = (0..ins)
                    .map(|i| (0..outs).map(|o| l.w[o][i] * delta[o]).sum())
                    .collect();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let layer = |i: usize, o: usize, act| DenseLayer { w: vec![vec![0.0; i]; o], b: vec![0.0; o], act };
        let net = MlpAlpha::new(
            vec![layer(1, 4, Activation::Tanh), layer(4, 4, Activation::Relu), layer(4, 1, Activation::Relu)],
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(net.forward(0.3), 0.0);
    }

    #[test]
    fn shape_validation() {
        let l = DenseLayer { w: vec![vec![1.0]], b: vec![0.0], act: Activation::Tanh };
        assert!(MlpAlpha::new(vec![l.clone()], 1.0, 1.0).is_err());
        let bad = DenseLayer { w: vec![vec![1.0, 2.0]], b: vec![0.0], act: Activation::Relu };
        assert!(MlpAlpha::new(vec![bad], 1.0, 1.0).is_err());
    }

    #[test]
    fn initialization_is_near_alpha0() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpAlpha::initialized(32, 0.5, 0.05, &mut rng).unwrap();
        assert_eq!(net.n_params(), 32 + 32 + 32 * 32 + 32 + 32 + 1);
        for k in 0..=20 {
            let v = net.forward(0.5 * k as f64 / 20.0);
            assert!((v / 0.05 - 1.0).abs() < 0.5, "alpha = {v}");
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = MlpAlpha::initialized(6, 1.0, 0.1, &mut rng).unwrap();
        let p = net.params();
        let before = net.forward(0.4);
        net.set_params(&p).unwrap();
        assert_eq!(net.forward(0.4), before);
        assert!(net.set_params(&p[1..]).is_err());
    }

    #[test]
    fn backprop_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let net = MlpAlpha::initialized(5, 1.0, 0.2, &mut rng).unwrap();
            let x = rng.random::<f64>();
            let mut grad = vec![0.0; net.n_params()];
            net.accumulate_gradient(x, 1.0, &mut grad);
            let p = net.params();
            for j in 0..p.len() {
                let h = 1e-6;
                let mut up = net.clone();
                let mut q = p.clone();
                q[j] += h;
                up.set_params(&q).unwrap();
                let mut dn = net.clone();
                q[j] -= 2.0 * h;
                dn.set_params(&q).unwrap();
                let fd = (up.forward(x) - dn.forward(x)) / (2.0 * h);
                assert!((fd - grad[j]).abs() <= 1e-7 * (1.0 + fd.abs()), "param {j}: {fd} vs {}", grad[j]);
            }
        }
    }

    #[test]
    fn output_is_non_negative_for_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut net = MlpAlpha::initialized(8, 1.0, 1.0, &mut rng).unwrap();
        let p: Vec<f64> = net.params().iter().map(|_| 4.0 * (rng.random::<f64>() - 0.5)).collect();
        net.set_params(&p).unwrap();
        for _ in 0..100_000 {
            let x = 4.0 * (rng.random::<f64>() - 0.5);
            assert!(net.forward(x) >= 0.0);
        }
    }
}
