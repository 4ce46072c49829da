//! Dilated residual dense learning framework and classifier head.

use crate::error::{Error, Result};
use crate::ops::conv::ConvGeom;
use crate::real::Real;
use crate::tape::Var;

use super::config::ModelConfig;
use super::{Ctx, SpecBuilder};

/// Dilated convs per dense block.
pub const DRDB_LAYERS: usize = 3;

pub fn drdb_prefix(k: usize) -> String {
    format!("drdlf.drdb{k}")
}

pub(crate) fn declare(cfg: &ModelConfig, sb: &mut SpecBuilder) {
    let f = cfg.feature_width();
    sb.conv("drdlf.f0", cfg.fused_width(), f, 3);
    for k in 1..=cfg.n_drdb {
        declare_block(&drdb_prefix(k), f, cfg.enable_drdb, sb);
    }
    sb.conv("drdlf.q0", f * cfg.n_drdb, f, 1);
    sb.conv("drdlf.q2.a", f, f, 3);
    sb.conv("drdlf.q2.b", f, f, 3);
    sb.linear("head.fc1", cfg.flatten_width(), cfg.fc_hidden());
    sb.output("head.fc2", cfg.fc_hidden(), cfg.classes);
}

fn declare_block(prefix: &str, f: usize, dense: bool, sb: &mut SpecBuilder) {
    if dense {
        for l in 1..=DRDB_LAYERS {
            sb.conv(&format!("{prefix}.conv{l}"), f * l, f, 3);
        }
        sb.conv(&format!("{prefix}.fuse"), f * DRDB_LAYERS, f, 1);
    } else {
        sb.conv(&format!("{prefix}.plain"), f, f, 3);
    }
}

/// One dilated residual dense block:
///
/// ```text
/// D_1 = relu(dconv(F))
/// D_2 = relu(dconv([F, D_1]))
/// D_3 = relu(dconv([F, D_1, D_2]))
/// out = F + conv1x1([D_1, D_2, D_3])
/// ```
pub fn drdb_forward<T: Real>(ctx: &mut Ctx<'_, T>, f_in: Var, prefix: &str) -> Result<Var> {
    let width = ctx.tape.shape(f_in)[1];
    let expected = ctx.store.value(&format!("{prefix}.conv1.weight"))?.shape()[1];
    if width != expected {
        return Err(Error::shape(
            "drdb",
            format!("input width {width}, block expects {expected}"),
        ));
    }
    let mut dense = vec![f_in];
    let mut outs = Vec::with_capacity(DRDB_LAYERS);
    for l in 1..=DRDB_LAYERS {
        let input = if dense.len() == 1 {
            f_in
        } else {
            ctx.tape.concat_channels(&dense)?
        };
        let d = ctx.conv(input, &format!("{prefix}.conv{l}"), ConvGeom::DILATED_3X3)?;
        let d = ctx.tape.relu(d);
        dense.push(d);
        outs.push(d);
    }
    let ds = ctx.tape.concat_channels(&outs)?;
    let reduced = ctx.conv(ds, &format!("{prefix}.fuse"), ConvGeom::POINTWISE)?;
    ctx.tape.add(f_in, reduced)
}

/// Stand-in used when DRDBs are ablated: `relu(conv3x3(F))`.
fn plain_block<T: Real>(ctx: &mut Ctx<'_, T>, f_in: Var, prefix: &str) -> Result<Var> {
    let y = ctx.conv(f_in, &format!("{prefix}.plain"), ConvGeom::SAME_3X3)?;
    Ok(ctx.tape.relu(y))
}

/// Fusion stage and head. Returns `(logits, Q_1)`.
pub fn drdlf_forward<T: Real>(
    ctx: &mut Ctx<'_, T>,
    fused: Var,
    main: Var,
    cfg: &ModelConfig,
) -> Result<(Var, Var)> {
    if cfg.n_drdb < 1 {
        return Err(Error::Config("at least one DRDB is required".into()));
    }
    let f0 = ctx.conv(fused, "drdlf.f0", ConvGeom::SAME_3X3)?;
    let mut f = ctx.tape.relu(f0);
    ctx.record("drdlf.f0", f);
    let mut chain = Vec::with_capacity(cfg.n_drdb);
    for k in 1..=cfg.n_drdb {
        let p = drdb_prefix(k);
        f = if cfg.enable_drdb {
            drdb_forward(ctx, f, &p)?
        } else {
            plain_block(ctx, f, &p)?
        };
        ctx.record(p, f);
        chain.push(f);
    }
    let cat = ctx.tape.concat_channels(&chain)?;
    ctx.record("drdlf.chain", cat);
    let q0 = ctx.conv(cat, "drdlf.q0", ConvGeom::POINTWISE)?;
    let q1 = if cfg.enable_global_residual {
        if ctx.tape.shape(q0) != ctx.tape.shape(main) {
            return Err(Error::shape(
                "global residual",
                format!(
                    "Q_0 {:?} vs main-branch features {:?}",
                    ctx.tape.shape(q0),
                    ctx.tape.shape(main)
                ),
            ));
        }
        ctx.tape.add(q0, main)?
    } else {
        q0
    };
    ctx.record("drdlf.q1", q1);
    let a = ctx.conv(q1, "drdlf.q2.a", ConvGeom::SAME_3X3)?;
    let a = ctx.tape.relu(a);
    let b = ctx.conv(a, "drdlf.q2.b", ConvGeom::SAME_3X3)?;
    let q2 = ctx.tape.relu(b);
    ctx.record("drdlf.q2", q2);
    let flat = ctx.tape.flatten(q2)?;
    ctx.record("head.flatten", flat);
    let h = ctx.linear(flat, "head.fc1")?;
    let h = ctx.tape.relu(h);
    let logits = ctx.linear(h, "head.fc2")?;
    ctx.record("head.logits", logits);
    Ok((logits, q1))
}
