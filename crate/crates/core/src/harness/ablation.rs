//! Ablation matrix over the architectural toggles.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::train::{evaluate, train, Dataset, TrainConfig};
use crate::model::{Branch, Fusion, ModelConfig, Network};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    /// Input branches and cross-attention.
    Inputs,
    MainBranch,
    Fusion,
    SaModule,
    /// DRDB and global residual learning.
    Drdlf,
    NDrdb,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 6] = [
        AblationAxis::Inputs,
        AblationAxis::MainBranch,
        AblationAxis::Fusion,
        AblationAxis::SaModule,
        AblationAxis::Drdlf,
        AblationAxis::NDrdb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Inputs => "inputs",
            AblationAxis::MainBranch => "main_branch",
            AblationAxis::Fusion => "fusion",
            AblationAxis::SaModule => "sa_module",
            AblationAxis::Drdlf => "drdlf",
            AblationAxis::NDrdb => "n_drdb",
        }
    }

    fn columns(self) -> &'static [&'static str] {
        match self {
            AblationAxis::Inputs => &["i2", "i1", "i3", "cross_attention"],
            AblationAxis::MainBranch => &["main_branch"],
            AblationAxis::Fusion => &["type"],
            AblationAxis::SaModule => &["sa_module"],
            AblationAxis::Drdlf => &["drdb", "global_residual"],
            AblationAxis::NDrdb => &["number"],
        }
    }

    /// One configuration per row, in table order.
    pub fn configs(self, base: &ModelConfig) -> Vec<ModelConfig> {
        let with = |f: &dyn Fn(&mut ModelConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            AblationAxis::Inputs => {
                // (i1, i2, i3, cross-attention); the main branch is I2 when
                // present, otherwise the single enabled input.
                let rows = [
                    (false, true, false, false),
                    (true, false, false, false),
                    (false, false, true, false),
                    (true, true, false, false),
                    (true, true, true, false),
                    (true, true, true, true),
                ];
                rows.iter()
                    .map(|&(i1, i2, i3, xa)| {
                        with(&|c| {
                            c.enable_i1 = i1;
                            c.enable_i2 = i2;
                            c.enable_i3 = i3;
                            c.enable_cross_attention = xa;
                            c.main_branch = if i2 {
                                Branch::I2
                            } else if i1 {
                                Branch::I1
                            } else {
                                Branch::I3
                            };
                        })
                    })
                    .collect()
            }
            AblationAxis::MainBranch => Branch::ALL
                .iter()
                .map(|&b| with(&|c| c.main_branch = b))
                .collect(),
            AblationAxis::Fusion => [Fusion::Add, Fusion::Concat]
                .iter()
                .map(|&f| with(&|c| c.fusion = f))
                .collect(),
            AblationAxis::SaModule => [false, true]
                .iter()
                .map(|&on| with(&|c| c.enable_sa_module = on))
                .collect(),
            AblationAxis::Drdlf => [(false, false), (true, false), (true, true)]
                .iter()
                .map(|&(d, g)| {
                    with(&|c| {
                        c.enable_drdb = d;
                        c.enable_global_residual = g;
                    })
                })
                .collect(),
            AblationAxis::NDrdb => (1..=5).map(|n| with(&|c| c.n_drdb = n)).collect(),
        }
    }

    fn cells(self, c: &ModelConfig) -> Vec<String> {
        let mark = |b: bool| if b { "yes" } else { "no" }.to_string();
        match self {
            AblationAxis::Inputs => vec![
                mark(c.enable_i2),
                mark(c.enable_i1),
                mark(c.enable_i3),
                if c.branches().len() > 1 {
                    mark(c.enable_cross_attention)
                } else {
                    "n/a".into()
                },
            ],
            AblationAxis::MainBranch => vec![format!("{:?}", c.main_branch)],
            AblationAxis::Fusion => vec![match c.fusion {
                Fusion::Add => "add".into(),
                Fusion::Concat => "concat".into(),
            }],
            AblationAxis::SaModule => vec![mark(c.enable_sa_module)],
            AblationAxis::Drdlf => vec![mark(c.enable_drdb), mark(c.enable_global_residual)],
            AblationAxis::NDrdb => vec![c.n_drdb.to_string()],
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let valid: Vec<_> = AblationAxis::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!(
                    "unknown ablation axis `{s}`; valid axes: {}",
                    valid.join(", ")
                ))
            })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub config: ModelConfig,
    pub params: usize,
    /// Channels entering the fusion stage.
    pub fused_width: usize,
    pub branches: Vec<Branch>,
    pub gated: Vec<Branch>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

impl AblationRow {
    fn structural(config: ModelConfig) -> Result<Self> {
        let net = Network::new(config.clone())?;
        Ok(AblationRow {
            params: net.count_params(),
            fused_width: config.fused_width(),
            branches: config.branches(),
            gated: config.gated_branches(),
            train_accuracy: None,
            test_accuracy: None,
            config,
        })
    }
}

/// Data and schedule for a trained ablation run.
pub struct AblationRun<'a> {
    pub train: &'a Dataset,
    pub test: &'a Dataset,
    pub tcfg: &'a TrainConfig,
    pub eval_batch: usize,
}

/// Builds every row of `axis`. With `run`, each configuration is trained
/// from its own initialization and evaluated; otherwise only the structure
/// is reported.
pub fn ablation_suite<T: Real>(
    base: &ModelConfig,
    axis: AblationAxis,
    run: Option<&AblationRun<'_>>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for cfg in axis.configs(base) {
        let mut row = AblationRow::structural(cfg)?;
        if let Some(run) = run {
            let net = Network::new(row.config.clone())?;
            let mut store = net.init_params::<T>(row.config.seed)?;
            train(&net, &mut store, run.train, run.tcfg)?;
            row.train_accuracy = Some(evaluate(&net, &store, run.train, run.eval_batch)?.accuracy);
            row.test_accuracy = Some(evaluate(&net, &store, run.test, run.eval_batch)?.accuracy);
        }
        rows.push(row);
    }
    Ok(rows)
}

/// CSV with the axis' toggle columns followed by structure and accuracy.
pub fn rows_to_csv(axis: AblationAxis, rows: &[AblationRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = axis.columns().to_vec();
    header.extend(["params", "fused_width", "train_acc", "test_acc"]);
    w.write_record(&header)?;
    let pct = |a: Option<f64>| a.map(super::metrics::format_percent).unwrap_or_default();
    for r in rows {
        let mut rec = axis.cells(&r.config);
        rec.extend([
            r.params.to_string(),
            r.fused_width.to_string(),
            pct(r.train_accuracy),
            pct(r.test_accuracy),
        ]);
        w.write_record(&rec)?;
    }
    w.into_inner()
        .map_err(|e| Error::invalid("ablation table", e.to_string()))
}
