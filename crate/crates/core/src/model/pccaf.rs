//! Polarization channel cross-attention framework.
//!
//! Three independent four-stage encoders turn I1, I2, I3 into Z_1..Z_3.
//! Each auxiliary branch is gated by a cross-attention map computed from
//! itself and the main (reference) branch, `Z_i' = Z_i ⊗ A_i`, and the
//! branch features are merged by channel concatenation (or summation).

use crate::error::{Error, Result};
use crate::ops::conv::ConvGeom;
use crate::real::Real;
use crate::tape::Var;

use super::config::{Branch, Fusion, ModelConfig};
use super::{Ctx, NetInputs, SpecBuilder};

/// Gated blocks after the reduction conv; with it they make three convs.
pub const XATTN_BLOCKS: usize = 2;

pub fn encoder_prefix(b: Branch) -> String {
    format!("pccaf.enc{}", b.number())
}

pub fn xattn_prefix(b: Branch) -> String {
    format!("pccaf.xattn{}", b.number())
}

pub(crate) fn declare(cfg: &ModelConfig, sb: &mut SpecBuilder) {
    let widths = cfg.encoder_widths();
    for b in cfg.branches() {
        let mut cin = 1;
        for (s, &w) in widths.iter().enumerate() {
            let stage = format!("{}.s{}", encoder_prefix(b), s + 1);
            sb.conv(&format!("{stage}.conv"), cin, w, 3);
            sb.bn(&format!("{stage}.bn"), w);
            cin = w;
        }
    }
    let f = cfg.feature_width();
    for b in cfg.gated_branches() {
        let p = xattn_prefix(b);
        sb.conv(&format!("{p}.reduce"), 2 * f, f, 3);
        for j in 1..=XATTN_BLOCKS {
            sb.conv(&format!("{p}.block{j}.conv"), f, f, 3);
            if cfg.enable_sa_module {
                declare_sa(&format!("{p}.block{j}.sa"), f, sb);
            }
        }
    }
}

fn declare_sa(prefix: &str, c: usize, sb: &mut SpecBuilder) {
    for proj in ["phi", "theta", "g"] {
        sb.conv(&format!("{prefix}.{proj}"), c, c / 2, 1);
    }
    sb.conv(&format!("{prefix}.out"), c / 2, c, 1);
}

/// Four stages of conv3x3 → BN → ReLU → maxpool/2 on a `[N, 1, S, S]` image.
pub fn encode_branch<T: Real>(ctx: &mut Ctx<'_, T>, img: Var, b: Branch) -> Result<Var> {
    let shape = ctx.tape.shape(img);
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::shape(
            "encode_branch",
            format!("branch {b:?} expects [N, 1, H, W], got {shape:?}"),
        ));
    }
    let prefix = encoder_prefix(b);
    let mut x = img;
    for s in 1..=4 {
        let stage = format!("{prefix}.s{s}");
        x = ctx.conv(x, &format!("{stage}.conv"), ConvGeom::SAME_3X3)?;
        x = ctx.batchnorm(x, &format!("{stage}.bn"))?;
        x = ctx.tape.relu(x);
        ctx.record(format!("{stage}.conv"), x);
        x = ctx.tape.maxpool2d(x, 2, 2)?;
        ctx.record(format!("{stage}.pool"), x);
    }
    Ok(x)
}

/// Non-local self-attention map with the same shape as `c`.
///
/// phi, theta and g are 1x1 projections to `C/2` channels; the response
/// `sum_j softmax_j(phi_i · theta_j) g_j` is projected back to `C` channels
/// by a linear 1x1 conv. The result multiplies `c` in the caller.
pub fn sa_module<T: Real>(ctx: &mut Ctx<'_, T>, c: Var, prefix: &str) -> Result<Var> {
    let ch = ctx.tape.shape(c)[1];
    if !ch.is_multiple_of(2) {
        return Err(Error::shape(
            "sa_module",
            format!("channel count {ch} must be even"),
        ));
    }
    let phi = ctx.conv(c, &format!("{prefix}.phi"), ConvGeom::POINTWISE)?;
    let theta = ctx.conv(c, &format!("{prefix}.theta"), ConvGeom::POINTWISE)?;
    let g = ctx.conv(c, &format!("{prefix}.g"), ConvGeom::POINTWISE)?;
    let y = ctx.tape.non_local(phi, theta, g)?;
    ctx.conv(y, &format!("{prefix}.out"), ConvGeom::POINTWISE)
}

/// Cross-attention map `A_i = sigmoid(C_3)` for feature maps `zi` against
/// reference `zr`:
///
/// ```text
/// C_0 = concat(zi, zr)
/// C_1 = relu(conv3x3(C_0))
/// C_k+1 = C_k * sa(C_k) + conv3x3(C_k)      (k = 1, 2)
/// ```
///
/// Without the SA module the product term reduces to `C_k`.
pub fn cross_attention<T: Real>(
    ctx: &mut Ctx<'_, T>,
    zi: Var,
    zr: Var,
    prefix: &str,
    use_sa: bool,
) -> Result<Var> {
    if ctx.tape.shape(zi) != ctx.tape.shape(zr) {
        return Err(Error::shape(
            "cross_attention",
            format!(
                "feature maps differ: {:?} vs {:?}",
                ctx.tape.shape(zi),
                ctx.tape.shape(zr)
            ),
        ));
    }
    let c0 = ctx.tape.concat_channels(&[zi, zr])?;
    let reduced = ctx.conv(c0, &format!("{prefix}.reduce"), ConvGeom::SAME_3X3)?;
    let mut c = ctx.tape.relu(reduced);
    for j in 1..=XATTN_BLOCKS {
        let block = format!("{prefix}.block{j}");
        let conv = ctx.conv(c, &format!("{block}.conv"), ConvGeom::SAME_3X3)?;
        let kept = if use_sa {
            let map = sa_module(ctx, c, &format!("{block}.sa"))?;
            ctx.tape.mul(c, map)?
        } else {
            c
        };
        c = ctx.tape.add(kept, conv)?;
    }
    Ok(ctx.tape.sigmoid(c))
}

pub struct PccafOutput {
    pub encoded: [Option<Var>; 3],
    pub gated: [Option<Var>; 3],
    pub attention: [Option<Var>; 3],
    pub fused: Var,
}

pub fn pccaf_forward<T: Real>(
    ctx: &mut Ctx<'_, T>,
    inputs: &NetInputs<T>,
    cfg: &ModelConfig,
) -> Result<PccafOutput> {
    let branches = cfg.branches();
    if branches.is_empty() {
        return Err(Error::Config("all branches disabled".into()));
    }
    let mut encoded = [None; 3];
    for &b in &branches {
        let img = inputs.branches[b.index()].clone().ok_or_else(|| {
            Error::invalid("pccaf", format!("no input supplied for enabled branch {b:?}"))
        })?;
        let x = ctx.tape.constant(img);
        encoded[b.index()] = Some(encode_branch(ctx, x, b)?);
    }
    let reference = encoded[cfg.main_branch.index()].ok_or_else(|| {
        Error::Config(format!("main branch {:?} is not enabled", cfg.main_branch))
    })?;
    let mut gated = encoded;
    let mut attention = [None; 3];
    for b in cfg.gated_branches() {
        let z = encoded[b.index()].expect("gated branches are enabled");
        let a = cross_attention(ctx, z, reference, &xattn_prefix(b), cfg.enable_sa_module)?;
        ctx.record(format!("{}.map", xattn_prefix(b)), a);
        attention[b.index()] = Some(a);
        gated[b.index()] = Some(ctx.tape.mul(z, a)?);
    }
    let parts: Vec<Var> = gated.iter().flatten().copied().collect();
    let fused = match cfg.fusion {
        Fusion::Concat => ctx.tape.concat_channels(&parts)?,
        Fusion::Add => {
            let mut acc = parts[0];
            for &p in &parts[1..] {
                acc = ctx.tape.add(acc, p)?;
            }
            acc
        }
    };
    ctx.record("pccaf.fused", fused);
    Ok(PccafOutput {
        encoded,
        gated,
        attention,
        fused,
    })
}
