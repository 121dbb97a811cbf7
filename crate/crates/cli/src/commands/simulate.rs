use fci_core::bootstrap::{BootstrapConfig, Scheme};
use fci_core::nn::TrainConfig;
use fci_core::simulate::{coverage_experiment, CoverageConfig, CoverageMethod, CoverageReport, SimConfig};
use serde::{Deserialize, Serialize};

use crate::config::{load_or_default, OutDir};
use crate::error::CliError;
use crate::Common;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Analytic,
    Oracle,
    TimeClustered,
    CrossSectional,
    Iid,
}

impl MethodName {
    fn method(self) -> CoverageMethod {
        match self {
            MethodName::Analytic => CoverageMethod::Analytic,
            MethodName::Oracle => CoverageMethod::Oracle,
            MethodName::TimeClustered => CoverageMethod::Bootstrap(Scheme::TimeClustered),
            MethodName::CrossSectional => CoverageMethod::Bootstrap(Scheme::CrossSectional),
            MethodName::Iid => CoverageMethod::Bootstrap(Scheme::Iid),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub sim: SimConfig,
    pub coverage: CoverageConfig,
    pub train: TrainConfig,
    pub bootstrap: BootstrapConfig,
    pub methods: Vec<MethodName>,
}

impl Default for SimulateConfig {
    /// A small run: 100 assets, 60 periods, 50 replications.
    fn default() -> Self {
        SimulateConfig {
            sim: SimConfig {
                n_assets: 100,
                n_periods: 60,
                ..SimConfig::default()
            },
            coverage: CoverageConfig {
                replications: 50,
                ..CoverageConfig::default()
            },
            train: TrainConfig::simulation(),
            bootstrap: BootstrapConfig::default(),
            methods: vec![
                MethodName::Analytic,
                MethodName::TimeClustered,
                MethodName::CrossSectional,
                MethodName::Iid,
            ],
        }
    }
}

/// `coverage.json` without the per-replicate forecasts.
#[derive(Serialize)]
struct CoverageDocument<'a> {
    config: &'a SimulateConfig,
    replications: usize,
    completed: usize,
    forecast_error_sd: f64,
    mean_analytic_se: f64,
    methods: Vec<MethodDocument<'a>>,
    failures: &'a [fci_core::simulate::FailedReplication],
}

#[derive(Serialize)]
struct MethodDocument<'a> {
    name: &'a str,
    mean: f64,
    sd: f64,
    ks_distance: f64,
    mean_scale: f64,
    coverage: &'a [fci_core::simulate::LevelCoverage],
    #[serde(skip_serializing_if = "Option::is_none")]
    quantile_coverage: Option<&'a [fci_core::simulate::LevelCoverage]>,
}

pub fn run(common: &Common) -> Result<(), CliError> {
    let loaded = load_or_default::<SimulateConfig>(common.config.as_deref())?;
    let mut cfg = loaded.value;
    if let Some(seed) = common.seed {
        cfg.sim.seed = seed;
    }
    if cfg.coverage.replications == 0 {
        return Err(CliError::Usage("coverage.replications must be positive".into()));
    }
    let methods: Vec<CoverageMethod> = cfg.methods.iter().map(|m| m.method()).collect();
    let report = coverage_experiment(&cfg.sim, &cfg.coverage, &methods, &cfg.train, &cfg.bootstrap)?;
    let out = OutDir::create(&common.out_dir)?;
    write_outputs(&out, &cfg, &report)?;
    print_summary(&report, &cfg.coverage.levels);
    Ok(())
}

fn write_outputs(out: &OutDir, cfg: &SimulateConfig, report: &CoverageReport) -> Result<(), CliError> {
    for m in &report.methods {
        out.with(&format!("tstats_{}.csv", m.name), |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["replication", "seed", "t"])?;
            for (o, t) in report.outcomes.iter().zip(&m.t_stats) {
                csv.write_record([o.replication.to_string(), o.seed.to_string(), t.to_string()])?;
            }
            csv.flush()?;
            Ok(())
        })?;
    }

    let schemes: Vec<Scheme> = report
        .outcomes
        .first()
        .map(|o| o.bootstrap.iter().map(|b| b.scheme).collect())
        .unwrap_or_default();
    out.with("replications.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        let mut header: Vec<String> = [
            "replication",
            "seed",
            "truth",
            "forecast",
            "basis_forecast",
            "analytic_se",
            "population_se",
        ]
        .map(String::from)
        .to_vec();
        header.extend(schemes.iter().map(|s| format!("sigma_star_{}", s.name())));
        csv.write_record(&header)?;
        for o in &report.outcomes {
            let mut rec = vec![
                o.replication.to_string(),
                o.seed.to_string(),
                o.truth.to_string(),
                o.forecast.to_string(),
                o.basis_forecast.to_string(),
                o.analytic_se.to_string(),
                o.population_se.to_string(),
            ];
            rec.extend(o.bootstrap.iter().map(|b| b.sigma_star.to_string()));
            csv.write_record(&rec)?;
        }
        csv.flush()?;
        Ok(())
    })?;

    let doc = CoverageDocument {
        config: cfg,
        replications: report.replications,
        completed: report.completed,
        forecast_error_sd: report.forecast_error_sd,
        mean_analytic_se: report.mean_analytic_se,
        methods: report
            .methods
            .iter()
            .map(|m| MethodDocument {
                name: &m.name,
                mean: m.mean,
                sd: m.sd,
                ks_distance: m.ks_distance,
                mean_scale: m.mean_scale,
                coverage: &m.coverage,
                quantile_coverage: m.quantile_coverage.as_deref(),
            })
            .collect(),
        failures: &report.failures,
    };
    out.json("coverage.json", &doc)?;

    out.with("summary.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["method", "mean", "sd", "ks_distance", "mean_scale"].map(String::from).to_vec();
        header.extend(cfg.coverage.levels.iter().map(|l| format!("coverage_{}", (l * 100.0).round())));
        csv.write_record(&header)?;
        for m in &report.methods {
            let mut rec = vec![
                m.name.clone(),
                m.mean.to_string(),
                m.sd.to_string(),
                m.ks_distance.to_string(),
                m.mean_scale.to_string(),
            ];
            rec.extend(m.coverage.iter().map(|c| c.coverage.to_string()));
            csv.write_record(&rec)?;
        }
        csv.flush()?;
        Ok(())
    })
}

fn print_summary(report: &CoverageReport, levels: &[f64]) {
    print!("{:<28} {:>8} {:>8} {:>8}", "method", "mean", "sd", "ks");
    for l in levels {
        print!(" {:>8}", format!("cov{}", (l * 100.0).round()));
    }
    println!();
    for m in &report.methods {
        print!("{:<28} {:>8.3} {:>8.3} {:>8.3}", m.name, m.mean, m.sd, m.ks_distance);
        for c in &m.coverage {
            print!(" {:>8.3}", c.coverage);
        }
        println!();
    }
    println!(
        "{} of {} replications completed; forecast error sd {:.3e}, mean analytic SE {:.3e}",
        report.completed, report.replications, report.forecast_error_sd, report.mean_analytic_se
    );
}
