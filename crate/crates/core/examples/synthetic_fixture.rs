//! Writes a small simulated panel and its factor returns as CSV.
//!
//! `cargo run -p fci-core --example synthetic_fixture -- <out-dir> [assets] [months] [seed]`

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use fci_core::backtest::Month;
use fci_core::simulate::{simulate, write_panel_csv, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map_or("data", String::as_str));
    let n_assets = args.get(1).map_or(Ok(5), |s| s.parse())?;
    let n_periods = args.get(2).map_or(Ok(120), |s| s.parse())?;
    let seed = args.get(3).map_or(Ok(20), |s| s.parse())?;
    let cfg = SimConfig {
        n_assets,
        n_periods,
        n_chars: 3,
        seed,
        ..SimConfig::default()
    };
    let sim = simulate(&cfg)?;
    let first = Month::new(2000, 1)?;
    std::fs::create_dir_all(&out)?;
    write_panel_csv(&sim, first, BufWriter::new(File::create(out.join("panel.csv"))?))?;

    // The return dated `first + k` loads on factor row `k`.
    let mut w = csv::Writer::from_path(out.join("factors.csv"))?;
    w.write_record(["month", "mkt_rf", "smb", "hml", "rf"])?;
    for (k, f) in sim.factors.iter().enumerate() {
        w.write_record([
            first.offset(k as i32).to_string(),
            f[0].to_string(),
            f[1].to_string(),
            f[2].to_string(),
            "0".to_string(),
        ])?;
    }
    w.flush()?;
    println!("wrote {} assets over {} months to {}", n_assets, n_periods, out.display());
    Ok(())
}
