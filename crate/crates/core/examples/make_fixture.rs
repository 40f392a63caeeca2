//! Writes the synthetic market fixture under `data/`: a 71-day forward curve
//! starting 2022-03-22, call quotes at 10 strikes generated from a known
//! `alpha`, and that `alpha` itself.

use std::path::PathBuf;

use chrono::{Duration, NaiveDate};
use mvhjm_core::calibrate::{price_vector, write_quotes, CalibrationConfig, MarketDataset, MarketOptions, Quote};
use mvhjm_core::{AlphaFunction, FutureContract, Result};

const DAY_AHEAD: f64 = 236.49;

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"));
    std::fs::create_dir_all(&out)?;
    let start = NaiveDate::from_ymd_opt(2022, 3, 22).expect("valid date");
    let curve = out.join("forward_curve.csv");
    let mut text = String::from("date,value\n");
    for k in 0..71 {
        let weekly = 1.0 + 0.03 * (2.0 * std::f64::consts::PI * k as f64 / 7.0).sin();
        let value = DAY_AHEAD * (1.0 - 0.0008 * k as f64) * weekly;
        text += &format!("{},{:.2}\n", start + Duration::days(k), value);
    }
    std::fs::write(&curve, text)?;

    let truth = true_alpha()?;
    truth.save_json(&out.join("alpha_true.json"))?;
    let opts = MarketOptions::default();
    let mu = mvhjm_core::measures::load_forward_curve(&curve, opts.tau2, DAY_AHEAD)?.measure;
    let strikes: Vec<f64> = (0..10).map(|i| 0.9 + 0.2 * i as f64 / 9.0).collect();
    let d = MarketDataset::new(
        mu,
        strikes.iter().map(|&strike| Quote { strike, price: 0.0 }).collect(),
        FutureContract::uniform(opts.tau1, opts.tau2)?,
        opts.exercise,
    )?;
    let prices = price_vector(&truth, &d, &CalibrationConfig::default())?;
    let quotes: Vec<Quote> = strikes
        .iter()
        .zip(prices)
        .map(|(&k, p)| Quote { strike: k * DAY_AHEAD, price: p * DAY_AHEAD })
        .collect();
    write_quotes(&out.join("quotes.csv"), &quotes)?;
    println!("wrote fixture to {}", out.display());
    Ok(())
}

/// Branching rate used to generate the quotes.
pub fn true_alpha() -> Result<AlphaFunction> {
    AlphaFunction::piecewise_linear(0.2, vec![0.0, 0.1, 0.2], vec![0.06, 0.05, 0.045])
}
