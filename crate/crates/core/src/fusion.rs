//! Weighted posterior fusion and simplex grid search over the weights.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::acoustic::TiedStateInventory;
use crate::error::{Error, Result};
use crate::math::ProbVector;
use crate::stream::PosteriorStream;
use crate::table::Table;

pub use crate::acoustic::{frame_error, FrameErrors};

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    target_weight: f64,
    source_weights: Vec<f64>,
}

impl FusionConfig {
    pub fn new(target_weight: f64, source_weights: Vec<f64>) -> Result<Self> {
        let all = std::iter::once(target_weight).chain(source_weights.iter().copied());
        let mut sum = 0.0;
        for w in all {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidArgument(format!("fusion weight {w} outside [0, 1]")));
            }
            sum += w;
        }
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!("fusion weights sum to {sum}")));
        }
        Ok(Self {
            target_weight,
            source_weights,
        })
    }

    /// All weight on the target model.
    pub fn target_only(sources: usize) -> Self {
        Self {
            target_weight: 1.0,
            source_weights: vec![0.0; sources],
        }
    }

    pub fn target_weight(&self) -> f64 {
        self.target_weight
    }

    pub fn source_weights(&self) -> &[f64] {
        &self.source_weights
    }

    fn check_sources(&self, n: usize) -> Result<()> {
        Error::check_dim("fusion source weights", self.source_weights.len(), n)
    }
}

/// `w_T · target + Σ w_i · mapped_i`.
pub fn fuse_frame(target: &ProbVector, mapped: &[ProbVector], cfg: &FusionConfig) -> Result<ProbVector> {
    cfg.check_sources(mapped.len())?;
    for m in mapped {
        Error::check_dim("fused frame classes", target.len(), m.len())?;
    }
    let mut out: Vec<f64> = target.as_slice().iter().map(|&p| cfg.target_weight * p).collect();
    for (m, &w) in mapped.iter().zip(&cfg.source_weights) {
        for (o, &p) in out.iter_mut().zip(m.as_slice()) {
            *o += w * p;
        }
    }
    ProbVector::new(out)
}

/// Frame-by-frame fusion; labels and provenance come from `target`.
pub fn fuse_stream(target: &PosteriorStream, mapped: &[PosteriorStream], cfg: &FusionConfig) -> Result<PosteriorStream> {
    cfg.check_sources(mapped.len())?;
    for m in mapped {
        target.check_aligned(m)?;
        Error::check_dim("fused stream classes", target.classes(), m.classes())?;
    }
    let mut probs: Array2<f64> = target.probs().mapv(|p| cfg.target_weight * p);
    for (m, &w) in mapped.iter().zip(&cfg.source_weights) {
        probs.scaled_add(w, &m.probs());
    }
    target.with_probs(probs, format!("{}+fused", target.model_language()))
}

/// Weight vectors `(c_0, …, c_S) / steps` with non-negative integer `c` summing
/// to `steps`, target weight descending, then source weights ascending.
fn simplex_grid(parts: usize, steps: usize) -> Vec<Vec<usize>> {
    fn rec(parts: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for c in 0..=left {
            prefix.push(c);
            rec(parts - 1, left - c, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for t in (0..=steps).rev() {
        let mut prefix = vec![t];
        if parts == 1 {
            if t == steps {
                out.push(prefix);
            }
            continue;
        }
        rec(parts - 1, steps - t, &mut prefix, &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub target_weight: f64,
    pub source_weights: Vec<f64>,
    pub val_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSearch {
    pub best: FusionConfig,
    pub best_error: f64,
    pub trace: Vec<TracePoint>,
}

/// Number of grid intervals for `grid_step`, which must divide 1.
pub fn grid_steps(grid_step: f64) -> Result<usize> {
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(Error::Config(format!("grid_step {grid_step} outside (0, 0.5]")));
    }
    let steps = (1.0 / grid_step).round();
    if (steps * grid_step - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("grid_step {grid_step} does not divide 1")));
    }
    Ok(steps as usize)
}

/// Exhaustive search of the weight simplex at resolution `grid_step` for the
/// lowest validation tied-class error. Ties prefer the larger target weight,
/// then lexicographically smaller source weights.
pub fn search_weights(
    target_val: &PosteriorStream,
    mapped_val: &[PosteriorStream],
    tying: &TiedStateInventory,
    grid_step: f64,
) -> Result<WeightSearch> {
    if target_val.is_empty() {
        return Err(Error::Empty("fusion validation stream"));
    }
    let steps = grid_steps(grid_step)?;
    let mut trace = Vec::new();
    let mut best: Option<(f64, FusionConfig)> = None;
    for counts in simplex_grid(1 + mapped_val.len(), steps) {
        let w: Vec<f64> = counts.iter().map(|&c| c as f64 / steps as f64).collect();
        let cfg = FusionConfig::new(w[0], w[1..].to_vec())?;
        let fused = fuse_stream(target_val, mapped_val, &cfg)?;
        let err = frame_error(&fused, tying)?.tied_class;
        trace.push(TracePoint {
            target_weight: cfg.target_weight,
            source_weights: cfg.source_weights.clone(),
            val_error: err,
        });
        // grid order already encodes the tie-break, so only strict improvements win
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, cfg));
        }
    }
    let (best_error, best) = best.expect("grid is never empty");
    Ok(WeightSearch { best, best_error, trace })
}

pub fn trace_table(trace: &[TracePoint]) -> Table {
    let sources = trace.first().map_or(0, |t| t.source_weights.len());
    let mut header = vec!["target_weight".to_string()];
    header.extend((1..=sources).map(|i| format!("source_weight_{i}")));
    header.push("val_error".into());
    let mut t = Table::new(header);
    for p in trace {
        let mut rec = vec![p.target_weight.to_string()];
        rec.extend(p.source_weights.iter().map(|v| v.to_string()));
        rec.push(p.val_error.to_string());
        t.push(rec).expect("trace points share one source count");
    }
    t
}

pub fn write_trace_csv<W: Write>(out: W, trace: &[TracePoint]) -> Result<()> {
    trace_table(trace).write_csv(out, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::LabelSpace;
    use crate::synth::Biphone;
    use ndarray::array;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn fuse_frame_hand_values() {
        let a = pv(&[0.8, 0.2]);
        let s = pv(&[0.2, 0.8]);
        let half = FusionConfig::new(0.5, vec![0.5]).unwrap();
        assert_eq!(fuse_frame(&a, &[s.clone()], &half).unwrap().as_slice(), &[0.5, 0.5]);
        let target = FusionConfig::new(1.0, vec![0.0]).unwrap();
        assert_eq!(fuse_frame(&a, &[s.clone()], &target).unwrap(), a);
        let source = FusionConfig::new(0.0, vec![1.0]).unwrap();
        assert_eq!(fuse_frame(&a, &[s.clone()], &source).unwrap(), s);
        assert!(FusionConfig::new(0.5, vec![0.6]).is_err());
        assert!(fuse_frame(&a, &[], &half).is_err());
    }

    #[test]
    fn grid_enumeration_order() {
        assert_eq!(simplex_grid(2, 2), vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(simplex_grid(3, 10).len(), 66);
        assert_eq!(simplex_grid(1, 4), vec![vec![4]]);
        assert!(grid_steps(0.3).is_err());
        assert!(grid_steps(0.75).is_err());
        assert_eq!(grid_steps(0.1).unwrap(), 10);
    }

    fn tying(k: usize) -> TiedStateInventory {
        let b: Vec<Biphone> = (0..k).map(|i| Biphone::new("a", &format!("c{i}"))).collect();
        TiedStateInventory::new("t", vec!["t".into()], b, (0..k).map(|i| vec![i]).collect()).unwrap()
    }

    #[test]
    fn search_with_identical_source_keeps_target() {
        let t = PosteriorStream::new(array![[0.7, 0.3], [0.4, 0.6]], vec![0, 0], LabelSpace::TiedClass, "t", "t", "f")
            .unwrap();
        let r = search_weights(&t, &[t.clone()], &tying(2), 0.5).unwrap();
        assert_eq!(r.trace.len(), 3);
        assert_eq!(r.best.target_weight(), 1.0);
        assert_eq!(r.best_error, 0.5);
    }

    #[test]
    fn stream_identity_is_bitwise() {
        let t = PosteriorStream::new(array![[0.7, 0.3], [0.4, 0.6]], vec![0, 1], LabelSpace::TiedClass, "t", "t", "f")
            .unwrap();
        let f = fuse_stream(&t, &[], &FusionConfig::target_only(0)).unwrap();
        assert_eq!(f.probs(), t.probs());
        assert_eq!(f.labels(), t.labels());
    }
}
