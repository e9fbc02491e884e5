use super::{advantages, DapoConfig, GroupView, RlError};

/// `[group][sample][token]` log-probabilities.
pub type TokenSeqs = [Vec<Vec<f64>>];

/// Gradient shaped like [`TokenSeqs`].
pub type TokenGrads = Vec<Vec<Vec<f64>>>;

/// Gradient with respect to toy-policy logits: `[group][sample][token][vocab]`.
pub type LogitGrads = Vec<Vec<Vec<Vec<f64>>>>;

/// Per-token surrogate `min(r·A, clip(r, 1-eps_low, 1+eps_high)·A)`.
pub fn clip_term(r: f64, a: f64, cfg: &DapoConfig) -> f64 {
    (r * a).min(r.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high) * a)
}

/// Derivative of [`clip_term`] with respect to the new log-probability
/// (where `r = exp(new - old)`, so `dr/dnew = r`). Zero where the clipped
/// branch is active.
pub fn clip_term_grad(r: f64, a: f64, cfg: &DapoConfig) -> f64 {
    let clipped = r.clamp(1.0 - cfg.eps_low, 1.0 + cfg.eps_high) * a;
    if r * a <= clipped {
        r * a
    } else {
        0.0
    }
}

fn check_shapes(groups: &[GroupView], new: &TokenSeqs, old: &TokenSeqs) -> Result<(), RlError> {
    if groups.is_empty() {
        return Err(RlError::GroupShape("no groups".into()));
    }
    if new.len() != groups.len() || old.len() != groups.len() {
        return Err(RlError::GroupShape(format!(
            "{} groups but {} new and {} old log-prob groups",
            groups.len(),
            new.len(),
            old.len()
        )));
    }
    for (g, view) in groups.iter().enumerate() {
        let n = view.rewards.len();
        if view.lengths.len() != n || new[g].len() != n || old[g].len() != n {
            return Err(RlError::GroupShape(format!("group {g}: sample counts disagree")));
        }
        for i in 0..n {
            let len = view.lengths[i];
            if len == 0 || new[g][i].len() != len || old[g][i].len() != len {
                return Err(RlError::PartitionMismatch {
                    group: g,
                    sample: i,
                    detail: format!("length {len}, {} new and {} old log-probs", new[g][i].len(), old[g][i].len()),
                });
            }
        }
    }
    Ok(())
}

/// Objective value: per group, the token-summed surrogate divided by the
/// group's total token count; then the mean over groups.
pub fn dapo_objective(
    groups: &[GroupView],
    new: &TokenSeqs,
    old: &TokenSeqs,
    cfg: &DapoConfig,
) -> Result<f64, RlError> {
    dapo_objective_grad(groups, new, old, cfg).map(|(j, _)| j)
}

/// Objective value and its gradient with respect to every new
/// log-probability, shaped like `new`.
pub fn dapo_objective_grad(
    groups: &[GroupView],
    new: &TokenSeqs,
    old: &TokenSeqs,
    cfg: &DapoConfig,
) -> Result<(f64, TokenGrads), RlError> {
    cfg.validate()?;
    check_shapes(groups, new, old)?;
    let n_groups = groups.len() as f64;
    let mut j = 0.0;
    let mut grad = Vec::with_capacity(groups.len());
    for (g, view) in groups.iter().enumerate() {
        let adv = advantages(view.rewards)?.advantages;
        let total: usize = view.lengths.iter().sum();
        let scale = 1.0 / (total as f64 * n_groups);
        let mut sum = 0.0;
        let mut gg = Vec::with_capacity(adv.len());
        for (i, a) in adv.iter().enumerate() {
            let mut gi = Vec::with_capacity(view.lengths[i]);
            for (nw, od) in new[g][i].iter().zip(&old[g][i]) {
                let r = (nw - od).exp();
                sum += clip_term(r, *a, cfg);
                gi.push(clip_term_grad(r, *a, cfg) * scale);
            }
            gg.push(gi);
        }
        j += sum * scale;
        grad.push(gg);
    }
    Ok((j, grad))
}

/// Log-softmax of each position's logits at the chosen index.
pub fn toy_policy_logprob(logits: &[Vec<f64>], chosen: &[usize]) -> Vec<f64> {
    logits.iter().zip(chosen).map(|(row, &k)| row[k] - log_sum_exp(row)).collect()
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Objective of a softmax toy policy and its gradient with respect to the
/// logits. Indexing is `[group][sample][token]`, with a logit row per token.
pub fn toy_policy_objective(
    groups: &[GroupView],
    logits: &[Vec<Vec<Vec<f64>>>],
    chosen: &[Vec<Vec<usize>>],
    old: &TokenSeqs,
    cfg: &DapoConfig,
) -> Result<(f64, LogitGrads), RlError> {
    if logits.len() != chosen.len() {
        return Err(RlError::GroupShape("logits and chosen indices disagree".into()));
    }
    let mut new = Vec::with_capacity(logits.len());
    for (lg, cg) in logits.iter().zip(chosen) {
        if lg.len() != cg.len() {
            return Err(RlError::GroupShape("logits and chosen indices disagree".into()));
        }
        new.push(lg.iter().zip(cg).map(|(l, c)| toy_policy_logprob(l, c)).collect::<Vec<_>>());
    }
    let (j, d_new) = dapo_objective_grad(groups, &new, old, cfg)?;
    let grad = logits
        .iter()
        .zip(chosen)
        .zip(&d_new)
        .map(|((lg, cg), dg)| {
            lg.iter()
                .zip(cg)
                .zip(dg)
                .map(|((li, ci), di)| {
                    li.iter()
                        .zip(ci)
                        .zip(di)
                        .map(|((row, &k), &d)| {
                            // d log softmax_k / d logit_m = [m == k] - p_m
                            let lse = log_sum_exp(row);
                            row.iter()
                                .enumerate()
                                .map(|(m, x)| d * (f64::from(u8::from(m == k)) - (x - lse).exp()))
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok((j, grad))
}
