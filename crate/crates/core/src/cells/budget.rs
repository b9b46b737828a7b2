//! Parameter accounting and budget matching.

use super::{exact_sqrt, nru, CellError, CellKind, CellSpec};

/// Largest accepted relative gap between a matched spec and its target.
pub const BUDGET_TOLERANCE: f64 = 0.02;

/// Total number of scalar parameters the cell owns (no output head).
pub fn count_params(spec: &CellSpec) -> usize {
    let (d, h) = (spec.input_size, spec.hidden_size);
    let block = h * h + d * h + h;
    match spec.kind {
        CellKind::RnnOrth | CellKind::RnnId => block + if spec.layer_norm { 2 * h } else { 0 },
        CellKind::Lstm | CellKind::LstmChrono => 4 * block,
        CellKind::Gru => 3 * block,
        CellKind::Janet => 2 * block,
        CellKind::Nru => {
            let (m, k) = (spec.memory_size, spec.num_heads);
            let s = spec.direction_width();
            let core = h * h + d * h + m * h + h;
            let heads = (nru::head_input_size(spec) + 1) * (2 * k + 4 * s);
            core + heads
        }
    }
}

/// Smallest memory width `>= target` (and `>= 1`) for which `k·m` is a perfect square.
pub(super) fn nearest_valid_memory(target: usize, k: usize) -> usize {
    let k = k.max(1);
    (target.max(1)..).find(|m| exact_sqrt(k * m).is_some()).expect("unbounded search")
}

fn valid_memories(k: usize, lo: usize, hi: usize) -> impl Iterator<Item = usize> {
    (lo.max(1)..=hi).filter(move |m| exact_sqrt(k * m).is_some())
}

fn relative_gap(count: usize, target: usize) -> f64 {
    (count as f64 - target as f64).abs() / target as f64
}

/// Resizes a default spec of `kind` to land within 2% of `target` parameters.
pub fn match_budget(kind: CellKind, input_size: usize, target: usize) -> Result<CellSpec, CellError> {
    match_budget_like(&CellSpec::with_defaults(kind, input_size, 1, 100), target)
}

/// Keeps every field of `template` except the sizes, which are searched.
///
/// Non-NRU kinds scan the hidden size. NRU scans `(h, m)` pairs with `k·m`
/// square and `m` within a factor of two of `h`, then prefers the pair with
/// the most balanced memory among those within tolerance.
pub fn match_budget_like(template: &CellSpec, target: usize) -> Result<CellSpec, CellError> {
    if target == 0 {
        return Err(CellError::Config("parameter budget must be positive".into()));
    }
    let mut best: Option<(CellSpec, usize)> = None;
    let mut within: Option<(CellSpec, usize)> = None;
    let mut consider = |spec: CellSpec| {
        let count = count_params(&spec);
        let gap = count.abs_diff(target);
        if best.as_ref().is_none_or(|(_, c)| gap < c.abs_diff(target)) {
            best = Some((spec.clone(), count));
        }
        if relative_gap(count, target) < BUDGET_TOLERANCE {
            let balance = |s: &CellSpec| s.memory_size.abs_diff(s.hidden_size);
            let better = within
                .as_ref()
                .is_none_or(|(w, c)| (balance(&spec), gap) < (balance(w), c.abs_diff(target)));
            if better {
                within = Some((spec, count));
            }
        }
        count
    };

    for h in 1.. {
        let mut base = template.clone();
        base.hidden_size = h;
        let smallest = if template.kind == CellKind::Nru {
            let k = template.num_heads.max(1);
            let mut smallest = usize::MAX;
            for m in valid_memories(k, h.div_ceil(2), 2 * h) {
                let mut spec = base.clone();
                spec.memory_size = m;
                smallest = smallest.min(consider(spec));
            }
            smallest
        } else {
            consider(base)
        };
        if smallest != usize::MAX && smallest as f64 > target as f64 * (1.0 + BUDGET_TOLERANCE) {
            break;
        }
    }

    match within {
        Some((spec, _)) => Ok(spec),
        None => {
            let (spec, count) = best.expect("at least one candidate is always scanned");
            Err(CellError::Config(format!(
                "no {} configuration within {:.0}% of {target} parameters; nearest is hidden_size={} memory_size={} with {count}",
                template.kind,
                BUDGET_TOLERANCE * 100.0,
                spec.hidden_size,
                spec.memory_size,
            )))
        }
    }
}
