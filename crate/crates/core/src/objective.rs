//! Deep-supervised hybrid loss: BCE + IoU on each of S², S³, S⁴.

use tscnet_tensor::{Graph, Real, Tensor, TensorError, Var};

use crate::error::Result;
use crate::model::Outputs;

/// Predictions are clamped to `[CLAMP_EPS, 1 − CLAMP_EPS]` before the logs.
pub const CLAMP_EPS: f64 = 1e-7;
/// Smoothing added to intersection and union.
pub const IOU_SMOOTH: f64 = 1.0;

fn check_same<T: Real>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.dims(a) != g.dims(b) {
        return Err(TensorError::Contract {
            op,
            msg: format!("prediction {:?} and mask {:?} differ in size", g.dims(a), g.dims(b)),
        }
        .into());
    }
    Ok(())
}

/// Mean binary cross-entropy.
pub fn bce_loss<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    let complement = g.affine(pred, -1.0, 1.0)?;
    bce_with_complement(g, pred, complement, gt)
}

/// Mean binary cross-entropy given `pred` and a separately computed
/// `1 − pred`. With `complement = σ(−z)` this avoids the cancellation in
/// `1 − σ(z)` when the prediction is close to one.
pub fn bce_with_complement<T: Real>(g: &mut Graph<T>, pred: Var, complement: Var, gt: Var) -> Result<Var> {
    check_same(g, "bce_loss", pred, gt)?;
    check_same(g, "bce_loss", complement, gt)?;
    let p = g.clamp(pred, CLAMP_EPS, 1.0 - CLAMP_EPS)?;
    let log_p = g.ln(p)?;
    let q = g.clamp(complement, CLAMP_EPS, 1.0 - CLAMP_EPS)?;
    let log_q = g.ln(q)?;
    let not_gt = g.affine(gt, -1.0, 1.0)?;
    let pos = g.mul(gt, log_p)?;
    let neg = g.mul(not_gt, log_q)?;
    let ll = g.add(pos, neg)?;
    let m = g.mean(ll)?;
    Ok(g.affine(m, -1.0, 0.0)?)
}

/// `1 − (Σpg + ε) / (Σ(p + g − pg) + ε)`.
pub fn iou_loss<T: Real>(g: &mut Graph<T>, pred: Var, gt: Var) -> Result<Var> {
    check_same(g, "iou_loss", pred, gt)?;
    let pg = g.mul(pred, gt)?;
    let inter = g.sum(pg)?;
    let total = g.add(pred, gt)?;
    let total = g.sum(total)?;
    let inter_s = g.affine(inter, 1.0, IOU_SMOOTH)?;
    let union = g.affine(inter, -1.0, IOU_SMOOTH)?;
    let union = g.add(total, union)?;
    let ratio = g.div(inter_s, union)?;
    Ok(g.affine(ratio, -1.0, 1.0)?)
}

/// Per-level loss terms, index 0 ↔ S², 1 ↔ S³, 2 ↔ S⁴.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub bce: [f64; 3],
    pub iou: [f64; 3],
    pub total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "bce2,bce3,bce4,iou2,iou3,iou4,total";

    pub fn csv_fields(&self) -> String {
        let v: Vec<String> = self.bce.iter().chain(&self.iou).chain([&self.total]).map(|x| format!("{x:.9}")).collect();
        v.join(",")
    }
}

/// Graph handles of the total loss and its terms.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub bce: [Var; 3],
    pub iou: [Var; 3],
    pub total: Var,
}

impl LossVars {
    pub fn report<T: Real>(&self, g: &Graph<T>) -> LossReport {
        let val = |v: Var| g.value(v).item().to_f64_lossy();
        LossReport { bce: self.bce.map(val), iou: self.iou.map(val), total: val(self.total) }
    }
}

/// Sum of BCE + IoU over the three probability maps; maps whose size differs
/// from the mask are bilinearly upsampled first.
pub fn total_loss<T: Real>(g: &mut Graph<T>, maps: [Var; 3], gt: Var) -> Result<LossVars> {
    let mut pairs = [(gt, gt); 3];
    for (pair, &m) in pairs.iter_mut().zip(&maps) {
        *pair = (m, g.affine(m, -1.0, 1.0)?);
    }
    loss_terms(g, pairs, gt)
}

/// [`total_loss`] of `σ(logits)`, with `1 − σ(z)` evaluated as `σ(−z)`.
/// Resampling is linear, so upsampling `σ(−z)` gives exactly one minus the
/// upsampled map.
pub fn total_loss_logits<T: Real>(g: &mut Graph<T>, logits: [Var; 3], gt: Var) -> Result<LossVars> {
    let mut pairs = [(gt, gt); 3];
    for (pair, &z) in pairs.iter_mut().zip(&logits) {
        let neg = g.affine(z, -1.0, 0.0)?;
        *pair = (g.sigmoid(z)?, g.sigmoid(neg)?);
    }
    loss_terms(g, pairs, gt)
}

fn loss_terms<T: Real>(g: &mut Graph<T>, pairs: [(Var, Var); 3], gt: Var) -> Result<LossVars> {
    let (_, h, w) = g.value(gt).chw().ok_or_else(|| TensorError::Contract {
        op: "total_loss",
        msg: format!("mask must be 1×H×W, got {:?}", g.dims(gt)),
    })?;
    let mut bce = [gt; 3];
    let mut iou = [gt; 3];
    let mut total: Option<Var> = None;
    for (i, &(m, q)) in pairs.iter().enumerate() {
        let (m, q) = if g.dims(m) != g.dims(gt) {
            (g.bilinear_up(m, h, w)?, g.bilinear_up(q, h, w)?)
        } else {
            (m, q)
        };
        bce[i] = bce_with_complement(g, m, q, gt)?;
        iou[i] = iou_loss(g, m, gt)?;
        let term = g.add(bce[i], iou[i])?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(LossVars { bce, iou, total: total.expect("three maps") })
}

/// Loss of a forward pass against a `H×W` or `1×H×W` mask.
pub fn model_loss<T: Real>(g: &mut Graph<T>, out: &Outputs, mask: &Tensor<f32>) -> Result<LossVars> {
    let dims = mask.dims();
    let mask = if dims.len() == 2 { mask.clone().reshape([1, dims[0], dims[1]])? } else { mask.clone() };
    let gt = g.constant(mask.cast());
    total_loss_logits(g, out.logits, gt)
}
