//! Subcommand dispatch and artifact emission.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use super::config::{Command, GeneratorSpec, RunConfig, SCHEMA_VERSION};
use super::ingest::{ingest_dataset, Column, Role};
use crate::asymptotics::{order_check, order_quadrature, OrderCheckConfig};
use crate::error::{Error, Result};
use crate::estimators::{estimate, estimate_strata, EstimateOptions};
use crate::exec::replicate_rng;
use crate::families::{lookup, Registered, StrataSpec, TwoBinomial};
use crate::model::{Dataset, Family, ParamPoint};
use crate::priors::{Prior, PriorKind};
use crate::risk::{conditional_predictive_kl_curve, simulate_risk, RiskConfig};

/// Command-line overrides of config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Omit the timestamp so identical configs give identical bytes.
    pub deterministic: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub summary: String,
    pub out_dir: PathBuf,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_PRECISION: i32 = 2;

/// Exit status for an error that aborted the run.
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. } | Error::Numerical(_) => EXIT_PRECISION,
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Clone, Serialize)]
struct DatasetInfo {
    source: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
    rows: usize,
    n: usize,
    columns: Vec<Column>,
    #[serde(skip_serializing_if = "Option::is_none")]
    strata: Option<StrataSpec>,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    schema_version: u32,
    command: String,
    tool_version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_unix: Option<u64>,
    seed: u64,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    dataset: Option<DatasetInfo>,
    result: T,
    tables: Vec<String>,
    precision_failure: bool,
    summary: String,
}

struct Tables {
    dir: PathBuf,
    written: Vec<String>,
}

impl Tables {
    fn write<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let path = self.dir.join("tables").join(name);
        let io = |e: std::io::Error| Error::Io {
            path: path.display().to_string(),
            source: e,
        };
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e.into(),
        })?;
        for r in rows {
            w.serialize(r).map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e.into(),
            })?;
        }
        w.flush().map_err(io)?;
        self.written.push(format!("tables/{name}"));
        Ok(())
    }
}

fn generate(family: &str, g: &GeneratorSpec, seed: u64) -> Result<(Dataset, DatasetInfo)> {
    let truth = ParamPoint::from_array(g.truth);
    let mut rng = replicate_rng(seed, 0, 0);
    let obs = Column { name: "x".into(), role: Role::Observation };
    if let Some(s) = g.strata {
        let strata = match lookup(family, None)? {
            Registered::Strata(s) => s,
            Registered::Single(_) => {
                return Err(Error::Config("generator `strata` needs a strata: family".into()))
            }
        };
        let parts = strata.sample(&vec![truth.lambda; s.k], truth.psi, &vec![s.n_k; s.k], &mut rng)?;
        let spec = strata.spec(&parts);
        let mut x = Vec::new();
        let mut labels = Vec::new();
        for (k, p) in parts.iter().enumerate() {
            x.extend_from_slice(p.values());
            labels.extend(std::iter::repeat_n(k, p.n()));
        }
        let d = Dataset::new(x)?.with_strata(labels)?;
        let info = DatasetInfo {
            source: "generator",
            path: None,
            rows: d.n(),
            n: d.n(),
            columns: vec![obs, Column { name: "stratum".into(), role: Role::Stratum }],
            strata: Some(spec),
        };
        return Ok((d, info));
    }
    let fam: Arc<dyn Family> = match (family, g.design) {
        ("two-binomial", Some([n, m])) => Arc::new(TwoBinomial::new(n, m)?),
        ("two-binomial", None) => return Err(Error::Config("two-binomial generator needs `design`".into())),
        (_, Some(_)) => return Err(Error::Config("`design` is only valid for two-binomial".into())),
        _ => lookup(family, None)?.single()?.clone(),
    };
    let d = fam.sample(truth, g.n, &mut rng)?;
    let mut columns = vec![obs];
    if d.covariates().is_some() {
        columns.push(Column { name: "z".into(), role: Role::Covariate });
    }
    let info = DatasetInfo {
        source: "generator",
        path: None,
        rows: d.n(),
        n: d.n(),
        columns,
        strata: None,
    };
    Ok((d, info))
}

fn load_data(cfg: &RunConfig, base: &Path, seed: u64) -> Result<(Dataset, DatasetInfo)> {
    if let Some(path) = cfg.dataset_path(base) {
        let ing = ingest_dataset(&path)?;
        let strata = match ing.dataset.stratum_labels() {
            Some(_) => match lookup(&cfg.family, Some(&ing.dataset))? {
                Registered::Strata(s) => Some(s.spec(&ing.dataset.split_strata()?)),
                Registered::Single(_) => None,
            },
            None => None,
        };
        let info = DatasetInfo {
            source: "file",
            path: cfg.dataset.as_ref().map(|p| p.display().to_string()),
            rows: ing.rows,
            n: ing.dataset.n(),
            columns: ing.columns,
            strata,
        };
        return Ok((ing.dataset, info));
    }
    let g = cfg.generator.as_ref().expect("validated");
    generate(&cfg.family, g, seed)
}

fn single(cfg: &RunConfig, data: &Dataset, cmd: Command) -> Result<Arc<dyn Family>> {
    match lookup(&cfg.family, Some(data))? {
        Registered::Single(f) => Ok(f),
        Registered::Strata(s) => Err(Error::Config(format!("`{cmd}` does not support the stratified family `{}`", s.id()))),
    }
}

#[derive(Serialize)]
struct PriorRow {
    lambda: f64,
    psi: f64,
    log_prior: f64,
}

#[derive(Serialize)]
struct PriorEvalResult {
    prior: String,
    data_dependent: bool,
    values: Vec<PriorRow>,
}

#[derive(Serialize)]
struct EstimateRow {
    quantity: &'static str,
    coordinate: &'static str,
    value: f64,
}

fn estimate_rows(r: &crate::estimators::EstimateReport) -> Vec<EstimateRow> {
    let mut rows = Vec::new();
    if let Some(m) = r.mle {
        rows.push(EstimateRow { quantity: "mle", coordinate: "lambda", value: m.lambda });
        rows.push(EstimateRow { quantity: "mle", coordinate: "psi", value: m.psi });
    }
    if let Some(c) = r.cml_psi {
        rows.push(EstimateRow { quantity: "cml", coordinate: "psi", value: c.value() });
    }
    if let Some(m) = &r.post_mode {
        rows.push(EstimateRow { quantity: "post_mode", coordinate: "lambda", value: m.lambda });
        rows.push(EstimateRow { quantity: "post_mode", coordinate: "psi", value: m.psi.value() });
    }
    if let Some(m) = &r.post_mean {
        let names: [&'static str; 2] = match r.estimand.as_str() {
            "canonical" => ["xi", "psi"],
            "scaled-location" => ["psi_lambda", "psi"],
            _ => ["lambda", "psi"],
        };
        for (c, v) in names.iter().zip(m.value) {
            rows.push(EstimateRow { quantity: "post_mean", coordinate: c, value: v });
        }
    }
    rows
}

#[derive(Serialize)]
struct FitRow {
    coordinate: String,
    exact: bool,
    slope: Option<f64>,
    slope_se: Option<f64>,
    points: usize,
    note: Option<String>,
}

#[derive(Serialize)]
struct RiskRow {
    estimator: crate::risk::RiskEstimator,
    metric: String,
    mean: f64,
    se: f64,
    used: usize,
    boundary_events: usize,
    failures: usize,
}

#[derive(Serialize)]
struct PairRow {
    a: crate::risk::RiskEstimator,
    b: crate::risk::RiskEstimator,
    metric: String,
    pairs: usize,
    mean: f64,
    se: f64,
    z: f64,
}

fn fmt2(v: [f64; 2]) -> String {
    format!("[{:.6}, {:.6}]", v[0], v[1])
}

/// Run one subcommand and write `report.json` and `tables/*.csv`.
pub fn run(cmd: Command, config_path: &Path, ov: &Overrides) -> Result<RunOutcome> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    cfg.validate(cmd, base)?;
    let out_dir = ov
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let tables_dir = out_dir.join("tables");
    std::fs::create_dir_all(&tables_dir).map_err(|e| Error::Io {
        path: tables_dir.display().to_string(),
        source: e,
    })?;
    let mut tables = Tables { dir: out_dir.clone(), written: Vec::new() };
    let seed = cfg.seed;
    let quadrature = cfg.quadrature.unwrap_or_default();
    let execution = cfg.execution.unwrap_or_default();

    let (result, dataset, precision_failure, summary): (serde_json::Value, Option<DatasetInfo>, bool, String) =
        match cmd {
            Command::PriorEval => {
                let (data, info) = load_data(&cfg, base, seed)?;
                let fam = single(&cfg, &data, cmd)?;
                let kind = cfg.prior_kind(PriorKind::Mpml)?;
                let prior = Prior::new(kind, fam.clone())?.capture(&data)?;
                let values = cfg
                    .points
                    .as_ref()
                    .expect("validated")
                    .iter()
                    .map(|&p| {
                        let th = ParamPoint::from_array(p);
                        Ok(PriorRow { lambda: p[0], psi: p[1], log_prior: prior.log(th)? })
                    })
                    .collect::<Result<Vec<_>>>()?;
                tables.write("prior_eval.csv", &values)?;
                let summary = format!("prior-eval {} {}: {} points", fam.id(), prior.label(), values.len());
                let r = PriorEvalResult {
                    prior: prior.label().to_string(),
                    data_dependent: kind.data_dependent(),
                    values,
                };
                (to_value(&r)?, Some(info), false, summary)
            }
            Command::Estimate => {
                let (data, info) = load_data(&cfg, base, seed)?;
                match lookup(&cfg.family, Some(&data))? {
                    Registered::Single(fam) => {
                        let opts = EstimateOptions {
                            mode_prior: cfg.mode_prior_kind()?,
                            mean_prior: cfg.prior_kind(PriorKind::Mpml)?,
                            estimand: cfg.estimand()?,
                            quadrature,
                        };
                        let r = estimate(fam, &data, &opts)?;
                        tables.write("estimate.csv", &estimate_rows(&r))?;
                        let mean = r.post_mean.as_ref().map_or("unavailable".into(), |m| fmt2(m.value));
                        let summary = format!(
                            "estimate {} n={}: post_mean={} ({}, {})",
                            r.family, r.n, mean, r.estimand, r.mean_prior
                        );
                        let pf = r.diagnostics.precision_failure;
                        (to_value(&r)?, Some(info), pf, summary)
                    }
                    Registered::Strata(s) => {
                        let parts = data.split_strata()?;
                        let r = estimate_strata(&s, &parts)?;
                        let rows = [("mle", r.psi_ml), ("cml", r.psi_cml), ("post_mode_pml", r.psi_mode_pml)]
                            .into_iter()
                            .map(|(q, v)| EstimateRow { quantity: q, coordinate: "psi", value: v })
                            .collect::<Vec<_>>();
                        tables.write("estimate.csv", &rows)?;
                        let summary = format!(
                            "estimate {} K={}: psi ml={:.6} cml={:.6}",
                            r.family, r.k, r.psi_ml, r.psi_cml
                        );
                        (to_value(&r)?, Some(info), false, summary)
                    }
                }
            }
            Command::OrderCheck => {
                let sec = cfg.order_check.as_ref().expect("validated");
                let oc = OrderCheckConfig {
                    family: cfg.family.clone(),
                    truth: sec.truth,
                    ns: sec.ns.clone(),
                    reps: sec.reps,
                    seed,
                    protocol: sec.protocol,
                    estimand: cfg.estimand.clone().unwrap_or_else(|| "canonical".into()),
                    prior: cfg.prior.clone().unwrap_or_else(|| "mpml".into()),
                    quadrature: cfg.quadrature.unwrap_or_else(order_quadrature),
                    mode_bound: sec.mode_bound.unwrap_or(50.0),
                    execution,
                };
                let r = order_check(&oc)?;
                tables.write("order_check.csv", &r.rows)?;
                let fits: Vec<FitRow> = r
                    .fits
                    .iter()
                    .map(|f| FitRow {
                        coordinate: f.coordinate.clone(),
                        exact: f.exact,
                        slope: f.fit.as_ref().map(|x| x.slope),
                        slope_se: f.fit.as_ref().map(|x| x.slope_se),
                        points: f.fit.as_ref().map_or(0, |x| x.ns.len()),
                        note: f.note.clone(),
                    })
                    .collect();
                tables.write("order_fit.csv", &fits)?;
                let pf = r.fits.iter().any(|f| !f.exact && f.fit.is_none());
                let slopes = fits
                    .iter()
                    .map(|f| match (f.exact, f.slope) {
                        (true, _) => format!("{}=exact", f.coordinate),
                        (false, Some(s)) => format!("{}={s:.3}", f.coordinate),
                        (false, None) => format!("{}=n/a", f.coordinate),
                    })
                    .collect::<Vec<_>>()
                    .join(" ");
                let summary = format!("order-check {} {:?}: slopes {slopes}", r.family, r.protocol);
                (to_value(&r)?, None, pf, summary)
            }
            Command::RiskSim => {
                let sec = cfg.risk.as_ref().expect("validated");
                let rc = RiskConfig {
                    family: cfg.family.clone(),
                    truth: sec.truth,
                    n: sec.n,
                    strata: sec.strata,
                    design: sec.design,
                    reps: sec.reps,
                    seed,
                    estimators: sec.estimators.clone(),
                    loss: sec.loss,
                    quadrature,
                    execution,
                };
                let r = simulate_risk(&rc)?;
                let rows: Vec<RiskRow> = r
                    .estimators
                    .iter()
                    .flat_map(|e| {
                        e.losses.iter().map(move |l| RiskRow {
                            estimator: e.estimator,
                            metric: l.name.clone(),
                            mean: l.mean,
                            se: l.se,
                            used: e.used,
                            boundary_events: e.boundary_events,
                            failures: e.failures,
                        })
                    })
                    .collect();
                tables.write("risk.csv", &rows)?;
                let bias: Vec<RiskRow> = r
                    .estimators
                    .iter()
                    .flat_map(|e| {
                        e.bias.iter().map(move |l| RiskRow {
                            estimator: e.estimator,
                            metric: format!("bias_{}", l.name),
                            mean: l.mean,
                            se: l.se,
                            used: e.used,
                            boundary_events: e.boundary_events,
                            failures: e.failures,
                        })
                    })
                    .collect();
                tables.write("bias.csv", &bias)?;
                let pairs: Vec<PairRow> = r
                    .paired
                    .iter()
                    .map(|p| PairRow {
                        a: p.a,
                        b: p.b,
                        metric: p.metric.clone(),
                        pairs: p.pairs,
                        mean: p.mean,
                        se: p.se,
                        z: p.z(),
                    })
                    .collect();
                tables.write("paired.csv", &pairs)?;
                let summary = format!(
                    "risk-sim {} reps={}: {}",
                    r.family,
                    r.reps,
                    rows.iter()
                        .map(|x| format!("{:?}/{}={:.4e}±{:.1e}", x.estimator, x.metric, x.mean, x.se))
                        .collect::<Vec<_>>()
                        .join(" ")
                );
                (to_value(&r)?, None, false, summary)
            }
            Command::PredictorKl => {
                let (data, info) = load_data(&cfg, base, seed)?;
                let fam = single(&cfg, &data, cmd)?;
                let grid = cfg.psi_grid.as_ref().expect("validated").values()?;
                let c = conditional_predictive_kl_curve(fam.as_ref(), &data, &grid, &quadrature)?;
                tables.write("predictor_kl.csv", &c.points)?;
                let summary = format!(
                    "predictor-kl {}: argmin={:.6} posterior mean={:.6}{}",
                    fam.id(),
                    c.argmin,
                    c.posterior_mean_psi,
                    if c.boundary_min { " (minimum on the grid boundary)" } else { "" }
                );
                (to_value(&c)?, Some(info), false, summary)
            }
        };

    let generated_unix = (!ov.deterministic).then(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())
    });
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command: cmd.to_string(),
        tool_version: env!("CARGO_PKG_VERSION"),
        generated_unix,
        seed,
        config: &cfg,
        dataset,
        result,
        tables: tables.written,
        precision_failure,
        summary: summary.clone(),
    };
    let path = out_dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| Error::Numerical(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(RunOutcome {
        exit_code: if precision_failure { EXIT_PRECISION } else { EXIT_OK },
        summary,
        out_dir,
    })
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Numerical(format!("report serialization: {e}")))
}
