//! The empirical training loss and its parameter gradient.
//!
//! For a batch of `N` collocation entries:
//!
//! ```text
//! l_cty = α₁/N Σ Φ²        l_hj = α₂/N Σ Ψ²
//! l_ge  = Σ_ℓ γ_ℓ/N Σ Φ_ℓ² + ω_ℓ/N Σ Ψ_ℓ²
//! l_bc  = β₀/N Σ (C(x,0) − μ₀(x))² + β₁/N Σ (C(x,1) − μ₁(x))²
//! ```
//!
//! Sums are plain sums over the sampled points. Because every term is
//! normalized by the size of the batch it is evaluated on, the loss of a
//! batch equals the size-weighted mean of the losses of any partition of it.
//!
//! Evaluation runs branch networks once per distinct pair, then pushes trunk
//! jets through the entries in fixed-size chunks. Chunk results are always
//! reduced in chunk order, so the parallel and sequential modes agree bit for
//! bit.

use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::{Array2, Zip};
use rayon::prelude::*;

use crate::collocation::{CollocationBatch, PairSensors};
use crate::error::{Error, Result};
use crate::operator::residual::{residual_vjp, residuals_from_slots, FieldPair, ResidualAdjoint, ResidualOptions};
use crate::operator::{combine, OperatorParams, BRANCH0_CTY, BRANCH0_HJ, BRANCH1_CTY, BRANCH1_HJ, TRUNK_CTY, TRUNK_HJ};
use crate::tensor::jet::{JetPlan, Slots};
use crate::tensor::mlp::GradBuffer;
use crate::tensor::tape::{InputMap, JetTape};

/// Loss term weights and the entropic parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta0: f64,
    pub beta1: f64,
    /// Gradient-enhancement weights on `∂x_ℓ Φ`.
    pub gamma: [f64; 2],
    /// Gradient-enhancement weights on `∂x_ℓ Ψ`.
    pub omega: [f64; 2],
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 30.0,
            alpha2: 30.0,
            beta0: 1.0,
            beta1: 1.0,
            gamma: [0.0; 2],
            omega: [0.0; 2],
            epsilon: 0.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            alpha1: 0.0,
            alpha2: 0.0,
            beta0: 0.0,
            beta1: 0.0,
            gamma: [0.0; 2],
            omega: [0.0; 2],
            epsilon: 0.0,
        }
    }

    /// Whether gradient enhancement is active.
    pub fn ge(&self) -> bool {
        self.gamma.iter().chain(&self.omega).any(|&w| w != 0.0)
    }

    pub fn residual_options(&self) -> ResidualOptions {
        ResidualOptions {
            epsilon: self.epsilon,
            ge: self.ge(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha1, self.alpha2, self.beta0, self.beta1, self.epsilon];
        let ok = all
            .iter()
            .chain(&self.gamma)
            .chain(&self.omega)
            .all(|w| w.is_finite() && *w >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be finite and nonnegative: {self:?}")))
        }
    }
}

/// Loss components attributed to one training pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PairLoss {
    pub pair: usize,
    pub cty: f64,
    pub hj: f64,
    pub bc: f64,
    pub ge: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub l_cty: f64,
    pub l_hj: f64,
    pub l_bc: f64,
    pub l_ge: f64,
    pub l_total: f64,
    /// Sorted by pair index; only pairs present in the batch appear.
    pub per_pair: Vec<PairLoss>,
}

impl LossReport {
    fn from_parts(totals: [f64; 4], per_pair: Vec<PairLoss>) -> Self {
        let [l_cty, l_hj, l_bc, l_ge] = totals;
        LossReport {
            l_cty,
            l_hj,
            l_bc,
            l_ge,
            l_total: l_cty + l_hj + l_bc + l_ge,
            per_pair,
        }
    }
}

/// How a loss evaluation is carried out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    /// Collocation entries per trunk pass.
    pub chunk: usize,
    /// Run chunks on the rayon pool.
    pub parallel: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            chunk: 64,
            parallel: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Terms {
    interior: bool,
    boundary: bool,
}

/// Full loss with gradients for the six networks, in network order.
pub fn total_loss(
    params: &OperatorParams,
    sensors: &PairSensors,
    batch: &CollocationBatch,
    weights: &LossWeights,
    opts: EvalOptions,
) -> Result<(LossReport, Vec<GradBuffer>)> {
    let terms = Terms {
        interior: true,
        boundary: true,
    };
    let (r, g) = evaluate(params, sensors, batch, weights, terms, opts, true)?;
    Ok((r, g.expect("gradients requested")))
}

/// Full loss without gradients.
pub fn loss_value(
    params: &OperatorParams,
    sensors: &PairSensors,
    batch: &CollocationBatch,
    weights: &LossWeights,
    opts: EvalOptions,
) -> Result<LossReport> {
    let terms = Terms {
        interior: true,
        boundary: true,
    };
    Ok(evaluate(params, sensors, batch, weights, terms, opts, false)?.0)
}

/// PDE terms only (`l_cty`, `l_hj`, `l_ge`).
pub fn loss_interior(
    params: &OperatorParams,
    sensors: &PairSensors,
    batch: &CollocationBatch,
    weights: &LossWeights,
    opts: EvalOptions,
) -> Result<(LossReport, Vec<GradBuffer>)> {
    let terms = Terms {
        interior: true,
        boundary: false,
    };
    let (r, g) = evaluate(params, sensors, batch, weights, terms, opts, true)?;
    Ok((r, g.expect("gradients requested")))
}

/// Boundary term only (`l_bc`), at the spatial parts of the batch points.
pub fn loss_boundary(
    params: &OperatorParams,
    sensors: &PairSensors,
    batch: &CollocationBatch,
    weights: &LossWeights,
    opts: EvalOptions,
) -> Result<(LossReport, Vec<GradBuffer>)> {
    let terms = Terms {
        interior: false,
        boundary: true,
    };
    let (r, g) = evaluate(params, sensors, batch, weights, terms, opts, true)?;
    Ok((r, g.expect("gradients requested")))
}

/// The same loss for arbitrary field pairs (one per training pair), point by
/// point. Used to check exact solutions and as a reference for the batched
/// engine.
pub fn fields_loss(fields: &[&dyn FieldPair], batch: &CollocationBatch, weights: &LossWeights) -> Result<LossReport> {
    weights.validate()?;
    batch.validate(fields.len())?;
    let opts = weights.residual_options();
    let n = batch.len() as f64;
    let mut per: BTreeMap<usize, PairLoss> = BTreeMap::new();
    let mut totals = [0.0; 4];
    for e in 0..batch.len() {
        let f = fields[batch.pair[e]];
        let [x1, x2, t] = batch.points[e];
        let (c, h) = f.fields([x1, x2], t, opts.order())?;
        let r = residuals_from_slots(&c.to_slots(), &h.to_slots(), opts);
        let c0 = f.fields([x1, x2], 0.0, 0)?.0.value - batch.mu0[e];
        let c1 = f.fields([x1, x2], 1.0, 0)?.0.value - batch.mu1[e];
        let parts = [
            weights.alpha1 / n * r.cty * r.cty,
            weights.alpha2 / n * r.hj * r.hj,
            weights.beta0 / n * c0 * c0 + weights.beta1 / n * c1 * c1,
            ge_loss(weights, n, r.ge_cty, r.ge_hj),
        ];
        let p = per.entry(batch.pair[e]).or_insert(PairLoss {
            pair: batch.pair[e],
            ..Default::default()
        });
        p.cty += parts[0];
        p.hj += parts[1];
        p.bc += parts[2];
        p.ge += parts[3];
        for k in 0..4 {
            totals[k] += parts[k];
        }
    }
    Ok(LossReport::from_parts(totals, per.into_values().collect()))
}

fn ge_loss(w: &LossWeights, n: f64, gc: Option<[f64; 2]>, gh: Option<[f64; 2]>) -> f64 {
    match (gc, gh) {
        (Some(gc), Some(gh)) => {
            w.gamma[0] / n * gc[0] * gc[0]
                + w.gamma[1] / n * gc[1] * gc[1]
                + w.omega[0] / n * gh[0] * gh[0]
                + w.omega[1] / n * gh[1] * gh[1]
        }
        _ => 0.0,
    }
}

struct Context<'a> {
    params: &'a OperatorParams,
    batch: &'a CollocationBatch,
    weights: &'a LossWeights,
    ropts: ResidualOptions,
    terms: Terms,
    with_grad: bool,
    /// Local pair index of every batch entry.
    local: Vec<usize>,
    npairs: usize,
    bc: Array2<f64>,
    bh: Array2<f64>,
    plan_c: JetPlan,
    plan_h: JetPlan,
    map: InputMap,
    n: f64,
}

struct ChunkOut {
    totals: [f64; 4],
    per_pair: Vec<[f64; 4]>,
    grad_c: Option<GradBuffer>,
    grad_h: Option<GradBuffer>,
    adj_bc: Array2<f64>,
    adj_bh: Array2<f64>,
}

fn evaluate(
    params: &OperatorParams,
    sensors: &PairSensors,
    batch: &CollocationBatch,
    weights: &LossWeights,
    terms: Terms,
    opts: EvalOptions,
    with_grad: bool,
) -> Result<(LossReport, Option<Vec<GradBuffer>>)> {
    weights.validate()?;
    batch.validate(sensors.pairs())?;
    if sensors.m() != params.arch().m() {
        return Err(Error::Dimension {
            context: "pair sensor values",
            expected: params.arch().m(),
            got: sensors.m(),
        });
    }
    if opts.chunk == 0 {
        return Err(Error::Invalid("chunk size must be positive".into()));
    }

    // Distinct pairs of the batch, sorted.
    let mut ids: Vec<usize> = batch.pair.clone();
    ids.sort_unstable();
    ids.dedup();
    let mut local_of = BTreeMap::new();
    for (l, &id) in ids.iter().enumerate() {
        local_of.insert(id, l);
    }
    let local: Vec<usize> = batch.pair.iter().map(|p| local_of[p]).collect();
    let u = ids.len();
    let m = sensors.m();
    let mut in0 = Array2::zeros((u, m));
    let mut in1 = Array2::zeros((u, m));
    for (l, &id) in ids.iter().enumerate() {
        in0.row_mut(l).assign(&sensors.mu0.row(id));
        in1.row_mut(l).assign(&sensors.mu1.row(id));
    }

    let value = JetPlan::value();
    let nets = params.networks();
    let tape_b0c = nets[BRANCH0_CTY].forward_jets(&value, in0.clone(), u)?;
    let tape_b1c = nets[BRANCH1_CTY].forward_jets(&value, in1.clone(), u)?;
    let tape_b0h = nets[BRANCH0_HJ].forward_jets(&value, in0, u)?;
    let tape_b1h = nets[BRANCH1_HJ].forward_jets(&value, in1, u)?;
    let bc = tape_b0c.output() * tape_b1c.output();
    let bh = tape_b0h.output() * tape_b1h.output();

    let ropts = weights.residual_options();
    let ctx = Context {
        params,
        batch,
        weights,
        ropts,
        terms,
        with_grad,
        local,
        npairs: u,
        bc,
        bh,
        plan_c: JetPlan::from_slots(&ropts.density_slots())?,
        plan_h: JetPlan::from_slots(&ropts.potential_slots())?,
        map: params.arch().trunk_map(),
        n: batch.len() as f64,
    };

    let ranges: Vec<Range<usize>> = (0..batch.len())
        .step_by(opts.chunk)
        .map(|s| s..(s + opts.chunk).min(batch.len()))
        .collect();

    let p = params.arch().p;
    let mut totals = [0.0; 4];
    let mut per_pair = vec![[0.0; 4]; u];
    let mut grad_c = with_grad.then(|| GradBuffer::zeros_for(&nets[TRUNK_CTY]));
    let mut grad_h = with_grad.then(|| GradBuffer::zeros_for(&nets[TRUNK_HJ]));
    let mut adj_bc = Array2::zeros((u, p));
    let mut adj_bh = Array2::zeros((u, p));
    let mut reduce = |out: ChunkOut| {
        for k in 0..4 {
            totals[k] += out.totals[k];
        }
        for (acc, v) in per_pair.iter_mut().zip(&out.per_pair) {
            for k in 0..4 {
                acc[k] += v[k];
            }
        }
        if let (Some(g), Some(o)) = (grad_c.as_mut(), out.grad_c.as_ref()) {
            g.accumulate(o);
        }
        if let (Some(g), Some(o)) = (grad_h.as_mut(), out.grad_h.as_ref()) {
            g.accumulate(o);
        }
        adj_bc += &out.adj_bc;
        adj_bh += &out.adj_bh;
    };
    if opts.parallel {
        let outs: Vec<ChunkOut> = ranges.par_iter().map(|r| eval_chunk(&ctx, r.clone())).collect::<Result<_>>()?;
        outs.into_iter().for_each(&mut reduce);
    } else {
        for r in &ranges {
            reduce(eval_chunk(&ctx, r.clone())?);
        }
    }

    let report = LossReport::from_parts(
        totals,
        ids.iter()
            .zip(&per_pair)
            .map(|(&pair, v)| PairLoss {
                pair,
                cty: v[0],
                hj: v[1],
                bc: v[2],
                ge: v[3],
            })
            .collect(),
    );
    if !with_grad {
        return Ok((report, None));
    }

    let branch_grad = |tape: &JetTape, net: usize, adj: &Array2<f64>, other: &Array2<f64>| -> Result<GradBuffer> {
        let mut g = GradBuffer::zeros_for(&nets[net]);
        tape.backward(&nets[net], &(adj * other), &mut g)?;
        Ok(g)
    };
    let grads = vec![
        branch_grad(&tape_b0c, BRANCH0_CTY, &adj_bc, tape_b1c.output())?,
        branch_grad(&tape_b1c, BRANCH1_CTY, &adj_bc, tape_b0c.output())?,
        grad_c.expect("gradient buffer"),
        branch_grad(&tape_b0h, BRANCH0_HJ, &adj_bh, tape_b1h.output())?,
        branch_grad(&tape_b1h, BRANCH1_HJ, &adj_bh, tape_b0h.output())?,
        grad_h.expect("gradient buffer"),
    ];
    Ok((report, Some(grads)))
}

fn eval_chunk(ctx: &Context<'_>, range: Range<usize>) -> Result<ChunkOut> {
    let nets = ctx.params.networks();
    let p = ctx.params.arch().p;
    let b = range.len();
    let start = range.start;
    let pts = &ctx.batch.points[range];
    let w = ctx.weights;
    let n = ctx.n;
    let mut out = ChunkOut {
        totals: [0.0; 4],
        per_pair: vec![[0.0; 4]; ctx.npairs],
        grad_c: ctx.with_grad.then(|| GradBuffer::zeros_for(&nets[TRUNK_CTY])),
        grad_h: ctx.with_grad.then(|| GradBuffer::zeros_for(&nets[TRUNK_HJ])),
        adj_bc: Array2::zeros((ctx.npairs, p)),
        adj_bh: Array2::zeros((ctx.npairs, p)),
    };
    let add = |out: &mut ChunkOut, q: usize, k: usize, v: f64| {
        out.totals[k] += v;
        out.per_pair[q][k] += v;
    };

    if ctx.terms.interior {
        let tc = nets[TRUNK_CTY].forward_jets(&ctx.plan_c, JetTape::seed_mapped(&ctx.plan_c, pts, &ctx.map), b)?;
        let th = nets[TRUNK_HJ].forward_jets(&ctx.plan_h, JetTape::seed_mapped(&ctx.plan_h, pts, &ctx.map), b)?;
        let (oc, oh) = (tc.output(), th.output());
        let mut adj_c = ctx.with_grad.then(|| Array2::zeros(oc.dim()));
        let mut adj_h = ctx.with_grad.then(|| Array2::zeros(oh.dim()));
        let (a1, a2) = (w.alpha1 / n, w.alpha2 / n);
        for e in 0..b {
            let q = ctx.local[start + e];
            let coef_c = ctx.bc.row(q);
            let coef_h = ctx.bh.row(q);
            let coef_c = coef_c.as_slice().expect("standard layout");
            let coef_h = coef_h.as_slice().expect("standard layout");
            let mut cs = Slots::zero();
            for (ch, &s) in ctx.plan_c.slots().iter().enumerate() {
                cs[s] = combine(coef_c, oc.row(ch * b + e).as_slice().expect("standard layout"));
            }
            let mut hs = Slots::zero();
            for (ch, &s) in ctx.plan_h.slots().iter().enumerate() {
                hs[s] = combine(coef_h, oh.row(ch * b + e).as_slice().expect("standard layout"));
            }
            let r = residuals_from_slots(&cs, &hs, ctx.ropts);
            add(&mut out, q, 0, a1 * r.cty * r.cty);
            add(&mut out, q, 1, a2 * r.hj * r.hj);
            add(&mut out, q, 3, ge_loss(w, n, r.ge_cty, r.ge_hj));
            let (Some(adj_c), Some(adj_h)) = (adj_c.as_mut(), adj_h.as_mut()) else {
                continue;
            };
            let gc = r.ge_cty.unwrap_or([0.0; 2]);
            let gh = r.ge_hj.unwrap_or([0.0; 2]);
            let seed = ResidualAdjoint {
                cty: 2.0 * a1 * r.cty,
                hj: 2.0 * a2 * r.hj,
                ge_cty: [2.0 * w.gamma[0] / n * gc[0], 2.0 * w.gamma[1] / n * gc[1]],
                ge_hj: [2.0 * w.omega[0] / n * gh[0], 2.0 * w.omega[1] / n * gh[1]],
            };
            let mut dc = Slots::zero();
            let mut dh = Slots::zero();
            residual_vjp(&cs, &hs, ctx.ropts, &seed, &mut dc, &mut dh);
            scatter(&ctx.plan_c, &dc, b, e, coef_c, oc, adj_c, &mut out.adj_bc, q);
            scatter(&ctx.plan_h, &dh, b, e, coef_h, oh, adj_h, &mut out.adj_bh, q);
        }
        if let (Some(adj_c), Some(g)) = (adj_c, out.grad_c.as_mut()) {
            tc.backward(&nets[TRUNK_CTY], &adj_c, g)?;
        }
        if let (Some(adj_h), Some(g)) = (adj_h, out.grad_h.as_mut()) {
            th.backward(&nets[TRUNK_HJ], &adj_h, g)?;
        }
    }

    if ctx.terms.boundary {
        let value = JetPlan::value();
        let mut bpts = Vec::with_capacity(2 * b);
        bpts.extend(pts.iter().map(|q| [q[0], q[1], 0.0]));
        bpts.extend(pts.iter().map(|q| [q[0], q[1], 1.0]));
        let tb = nets[TRUNK_CTY].forward_jets(&value, JetTape::seed_mapped(&value, &bpts, &ctx.map), 2 * b)?;
        let ob = tb.output();
        let mut adj = ctx.with_grad.then(|| Array2::zeros(ob.dim()));
        let (b0, b1) = (w.beta0 / n, w.beta1 / n);
        for e in 0..b {
            let q = ctx.local[start + e];
            let coef = ctx.bc.row(q);
            let coef = coef.as_slice().expect("standard layout");
            let r0 = combine(coef, ob.row(e).as_slice().expect("standard layout")) - ctx.batch.mu0[start + e];
            let r1 = combine(coef, ob.row(b + e).as_slice().expect("standard layout")) - ctx.batch.mu1[start + e];
            add(&mut out, q, 2, b0 * r0 * r0 + b1 * r1 * r1);
            if let Some(adj) = adj.as_mut() {
                for (row, d) in [(e, 2.0 * b0 * r0), (b + e, 2.0 * b1 * r1)] {
                    let o = ob.row(row);
                    Zip::from(adj.row_mut(row)).and(coef).for_each(|a, &c| *a = c * d);
                    Zip::from(out.adj_bc.row_mut(q)).and(&o).for_each(|a, &t| *a += d * t);
                }
            }
        }
        if let (Some(adj), Some(g)) = (adj, out.grad_c.as_mut()) {
            tb.backward(&nets[TRUNK_CTY], &adj, g)?;
        }
    }
    Ok(out)
}

/// Pulls slot adjoints of one entry back to the trunk outputs and to the
/// branch products.
#[allow(clippy::too_many_arguments)]
fn scatter(
    plan: &JetPlan,
    d: &Slots,
    b: usize,
    e: usize,
    coef: &[f64],
    trunk_out: &Array2<f64>,
    adj_trunk: &mut Array2<f64>,
    adj_coef: &mut Array2<f64>,
    q: usize,
) {
    for (ch, &s) in plan.slots().iter().enumerate() {
        let ds = d[s];
        if ds == 0.0 {
            continue;
        }
        let row = ch * b + e;
        Zip::from(adj_trunk.row_mut(row)).and(coef).for_each(|a, &c| *a = c * ds);
        Zip::from(adj_coef.row_mut(q)).and(trunk_out.row(row)).for_each(|a, &t| *a += ds * t);
    }
}
