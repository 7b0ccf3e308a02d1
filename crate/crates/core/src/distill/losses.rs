use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

pub const PROB_FLOOR: f32 = 1e-12;

fn check_pair(a: &Tensor, b: &Tensor, what: &str) -> Result<(usize, usize)> {
    match (a.shape(), b.shape()) {
        ([n, k], [m, l]) if n == m && k == l => Ok((*n, *k)),
        (sa, sb) => Err(Error::Dimension(format!("{what}: shapes {sa:?} and {sb:?} differ or are not B×K"))),
    }
}

fn check_distribution(p: &Tensor, k: usize, what: &str) -> Result<()> {
    for (row, r) in p.data().chunks(k).enumerate() {
        let s: f64 = r.iter().map(|&v| v as f64).sum();
        if (s - 1.0).abs() > 1e-5 || r.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Contract(format!("{what} row {row} is not a distribution (sum {s})")));
        }
    }
    Ok(())
}

fn check_one_hot(y: &Tensor, k: usize) -> Result<()> {
    for (row, r) in y.data().chunks(k).enumerate() {
        let ones = r.iter().filter(|&&v| v == 1.0).count();
        let zeros = r.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::Label(format!("target row {row} is not one-hot: {r:?}")));
        }
    }
    Ok(())
}

fn ln(v: f32) -> f64 {
    (v.max(PROB_FLOOR) as f64).ln()
}

/// Batch mean of KL(p_aux ‖ p_s), both clamped below at 1e-12.
pub fn skd_loss(p_s: &Tensor, p_aux: &Tensor) -> Result<f32> {
    let (b, k) = check_pair(p_s, p_aux, "skd_loss")?;
    check_distribution(p_s, k, "p_S")?;
    check_distribution(p_aux, k, "p_S'")?;
    let total: f64 = p_s.data().iter().zip(p_aux.data()).map(|(&p, &q)| q as f64 * (ln(q) - ln(p))).sum();
    Ok((total / b as f64) as f32)
}

/// Batch mean of −Σ y log p, with p clamped below at 1e-12.
pub fn ce_loss(p_s: &Tensor, y: &Tensor) -> Result<f32> {
    let (b, k) = check_pair(p_s, y, "ce_loss")?;
    check_one_hot(y, k)?;
    let total: f64 = p_s.data().iter().zip(y.data()).map(|(&p, &t)| -(t as f64) * ln(p)).sum();
    Ok((total / b as f64) as f32)
}

fn check_mix(alpha: f32, tau: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidHyperparameter(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidHyperparameter(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

/// α·L_ce + (1−α)·τ²·L_skd.
pub fn total_loss(l_ce: f32, l_skd: f32, alpha: f32, tau: f32) -> Result<f32> {
    check_mix(alpha, tau)?;
    Ok(alpha * l_ce + (1.0 - alpha) * tau * tau * l_skd)
}

/// Loss nodes recorded for one step.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub ce: Var,
    pub skd: Option<Var>,
    pub total: Var,
}

/// Records the training objective on `tape` for student `logits`.
///
/// Cross-entropy uses probabilities at temperature `ce_tau`. When `p_aux`
/// is given, the distillation term compares it with the student's
/// τ-softened probabilities and is mixed in with weight (1−α)·τ²; `p_aux`
/// enters as a constant, so no gradient reaches the auxiliary model. Without
/// `p_aux` the objective is the cross-entropy alone.
pub fn objective_on_tape(
    tape: &mut Tape,
    logits: Var,
    targets: &Tensor,
    p_aux: Option<&Tensor>,
    alpha: f32,
    tau: f32,
    ce_tau: f32,
) -> Result<LossVars> {
    check_mix(alpha, tau)?;
    let (b, k) = match tape.shape(logits) {
        [b, k] => (*b, *k),
        s => return Err(Error::Dimension(format!("logits must be B×K, got {s:?}"))),
    };
    if targets.shape() != [b, k] {
        return Err(Error::Dimension(format!("targets {:?} do not match logits {:?}", targets.shape(), [b, k])));
    }
    check_one_hot(targets, k)?;
    let inv_b = 1.0 / b as f32;

    let p_ce = tape.softmax_temperature(logits, ce_tau)?;
    let ln_ce = tape.ln_clamped(p_ce, PROB_FLOOR);
    let y = tape.constant(targets);
    let picked = tape.mul(y, ln_ce)?;
    let picked = tape.sum(picked);
    let ce = tape.scale(picked, -inv_b);

    let Some(p_aux) = p_aux else {
        return Ok(LossVars { ce, skd: None, total: ce });
    };
    if p_aux.shape() != [b, k] {
        return Err(Error::Dimension(format!("p_S' {:?} does not match logits {:?}", p_aux.shape(), [b, k])));
    }
    check_distribution(p_aux, k, "p_S'")?;
    let p_s = if ce_tau == tau { p_ce } else { tape.softmax_temperature(logits, tau)? };
    let ln_s = if ce_tau == tau { ln_ce } else { tape.ln_clamped(p_s, PROB_FLOOR) };
    // Σ q ln q does not depend on the student and is added as a constant
    let entropy_term: f64 = p_aux.data().iter().map(|&q| q as f64 * ln(q)).sum();
    let q = tape.constant(p_aux);
    let cross = tape.mul(q, ln_s)?;
    let cross = tape.sum(cross);
    let cross = tape.scale(cross, -inv_b);
    let neg_h = tape.constant(&Tensor::scalar((entropy_term / b as f64) as f32));
    let skd = tape.add(cross, neg_h)?;

    let a = tape.scale(ce, alpha);
    let s = tape.scale(skd, (1.0 - alpha) * tau * tau);
    let total = tape.add(a, s)?;
    Ok(LossVars { ce, skd: Some(skd), total })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f32]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn skd_examples() {
        let half = t(&[&[0.5, 0.5]]);
        assert_eq!(skd_loss(&half, &half).unwrap(), 0.0);
        assert!((skd_loss(&half, &t(&[&[1.0, 0.0]])).unwrap() - 2f32.ln()).abs() < 1e-6);
        assert!((skd_loss(&half, &t(&[&[0.75, 0.25]])).unwrap() - 0.13081).abs() < 1e-4);
        assert!(matches!(skd_loss(&half, &t(&[&[0.5, 0.5], &[0.5, 0.5]])), Err(Error::Dimension(_))));
    }

    #[test]
    fn ce_examples() {
        assert_eq!(ce_loss(&t(&[&[1.0, 0.0]]), &t(&[&[1.0, 0.0]])).unwrap(), 0.0);
        assert!((ce_loss(&t(&[&[0.5, 0.5]]), &t(&[&[1.0, 0.0]])).unwrap() - 2f32.ln()).abs() < 1e-6);
        assert!((ce_loss(&t(&[&[0.25, 0.75]]), &t(&[&[1.0, 0.0]])).unwrap() - 1.3863).abs() < 1e-4);
        assert!(matches!(ce_loss(&t(&[&[0.5, 0.5]]), &t(&[&[0.5, 0.5]])), Err(Error::Label(_))));
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(0.7, 123.0, 1.0, 4.0).unwrap(), 0.7);
        assert!((total_loss(1.0, 0.1, 0.6, 4.0).unwrap() - 1.24).abs() < 1e-6);
        assert_eq!(total_loss(9.0, 0.5, 0.0, 3.0).unwrap(), 4.5);
        assert!(matches!(total_loss(1.0, 1.0, 1.1, 4.0), Err(Error::InvalidHyperparameter(_))));
    }

    #[test]
    fn tape_objective_matches_plain_losses() {
        let logits = t(&[&[0.3, -1.0, 2.0], &[1.5, 0.2, 0.1]]);
        let y = t(&[&[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0]]);
        let p_aux = t(&[&[0.2, 0.3, 0.5], &[0.6, 0.3, 0.1]]);
        for ce_tau in [4.0, 1.0] {
            let mut tape = Tape::new();
            let z = tape.leaf(&logits.clone().with_requires_grad(true));
            let l = objective_on_tape(&mut tape, z, &y, Some(&p_aux), 0.6, 4.0, ce_tau).unwrap();
            let p_ce = crate::tensor::softmax_temperature(&logits, ce_tau).unwrap();
            let p_s = crate::tensor::softmax_temperature(&logits, 4.0).unwrap();
            let ce = ce_loss(&p_ce, &y).unwrap();
            let skd = skd_loss(&p_s, &p_aux).unwrap();
            assert!((tape.item(l.ce).unwrap() - ce).abs() < 1e-5);
            assert!((tape.item(l.skd.unwrap()).unwrap() - skd).abs() < 1e-5);
            assert!((tape.item(l.total).unwrap() - total_loss(ce, skd, 0.6, 4.0).unwrap()).abs() < 1e-5);
        }
    }
}
