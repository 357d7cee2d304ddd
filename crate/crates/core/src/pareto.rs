//! Two-objective minimization helpers: normalization, non-dominated
//! filtering (global and per bit-width segment), hypervolume and
//! hypervolume improvement, plus the evaluated-configuration archive.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::qconfig::ModelQuantConfig;
use crate::scalar::Scalar;

/// Default number of bit-width segments.
pub const DEFAULT_SEGMENTS: usize = 40;

/// `(loss / loss_max, bits / bits_max)`, each clamped to `[0, 1]`.
pub fn normalize<T: Scalar>(loss: T, loss_max: T, bits: T, bits_max: T) -> Result<(T, T)> {
    if !(loss_max > T::zero()) || !(bits_max > T::zero()) {
        return Err(invalid("normalization maxima must be positive"));
    }
    let clamp = |v: T| v.max(T::zero()).min(T::one());
    Ok((clamp(loss / loss_max), clamp(bits / bits_max)))
}

/// Accuracy-style metric on a 0–100 scale mapped to a minimization
/// objective: `1 − acc/100`.
pub fn normalize_accuracy<T: Scalar>(acc: T) -> T {
    T::one() - acc / T::of(100.0)
}

/// `q` dominates `p`: no worse in both coordinates, better in one.
pub fn dominates<T: Scalar>(q: (T, T), p: (T, T)) -> bool {
    q.0 <= p.0 && q.1 <= p.1 && (q.0 < p.0 || q.1 < p.1)
}

/// Indices (ascending) of the points not dominated by any other point.
/// Exact duplicates of a non-dominated point are all kept.
pub fn pareto_front<T: Scalar>(points: &[(T, T)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .0
            .partial_cmp(&points[b].0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(points[a].1.partial_cmp(&points[b].1).unwrap_or(std::cmp::Ordering::Equal))
    });
    let mut keep = Vec::new();
    let mut best: Option<(T, T)> = None;
    for i in order {
        let p = points[i];
        match best {
            None => {
                keep.push(i);
                best = Some(p);
            }
            Some(b) if p.1 < b.1 => {
                keep.push(i);
                best = Some(p);
            }
            Some(b) if p == b => keep.push(i),
            _ => {}
        }
    }
    keep.sort_unstable();
    keep
}

/// Segment of `f2` among `u` equal-width segments over `[lo, hi]`; the last
/// segment is closed on the right.
pub fn segment_index<T: Scalar>(f2: T, lo: T, hi: T, u: usize) -> usize {
    if !(hi > lo) {
        return 0;
    }
    let width = (hi - lo) / T::of_usize(u);
    let k = ((f2 - lo) / width).floor().as_f64();
    (k.max(0.0) as usize).min(u - 1)
}

/// Union over segments of each segment's own non-dominated points,
/// returned as ascending indices.
pub fn segmented_filter<T: Scalar>(points: &[(T, T)], u: usize) -> Result<Vec<usize>> {
    if u == 0 {
        return Err(invalid("segment count must be at least 1"));
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let lo = points.iter().map(|p| p.1).fold(T::infinity(), T::min);
    let hi = points.iter().map(|p| p.1).fold(T::neg_infinity(), T::max);
    let mut segments: Vec<Vec<usize>> = vec![Vec::new(); u];
    for (i, p) in points.iter().enumerate() {
        segments[segment_index(p.1, lo, hi, u)].push(i);
    }
    let mut keep = Vec::new();
    for seg in segments.iter().filter(|s| !s.is_empty()) {
        let local: Vec<(T, T)> = seg.iter().map(|&i| points[i]).collect();
        keep.extend(pareto_front(&local).into_iter().map(|k| seg[k]));
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Area dominated by `points` and bounded by `reference`. Points beyond the
/// reference in either coordinate are dropped with a warning.
pub fn hypervolume_2d<T: Scalar>(points: &[(T, T)], reference: (T, T)) -> T {
    let inside: Vec<(T, T)> = points
        .iter()
        .copied()
        .filter(|p| p.0 <= reference.0 && p.1 <= reference.1)
        .collect();
    if inside.len() < points.len() {
        log::warn!(
            "{} point(s) beyond the reference point excluded from the hypervolume",
            points.len() - inside.len()
        );
    }
    let mut front: Vec<(T, T)> = pareto_front(&inside).into_iter().map(|i| inside[i]).collect();
    front.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut hv = T::zero();
    let mut prev = reference.1;
    for p in front {
        if p.1 < prev {
            hv += (reference.0 - p.0) * (prev - p.1);
            prev = p.1;
        }
    }
    hv
}

/// Hypervolume gained by adding `p` to `front`; 0 when `p` is weakly
/// dominated or beyond the reference.
pub fn hvi<T: Scalar>(p: (T, T), front: &[(T, T)], reference: (T, T)) -> T {
    if p.0 >= reference.0 || p.1 >= reference.1 || front.iter().any(|&q| q.0 <= p.0 && q.1 <= p.1) {
        return T::zero();
    }
    let mut with = front.to_vec();
    with.push(p);
    (hypervolume_2d(&with, reference) - hypervolume_2d(front, reference)).max(T::zero())
}

/// One evaluated configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub config: ModelQuantConfig,
    pub loss: f64,
    pub avg_bits: f64,
    pub f1_norm: f64,
    pub f2_norm: f64,
    /// Index of the parameter snapshot `loss` was measured under.
    pub snapshot: usize,
}

/// Every configuration evaluated during a run, with fixed normalization
/// constants so that points from different epochs stay comparable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive {
    pub entries: Vec<ArchiveEntry>,
    pub loss_max: f64,
    pub bits_max: f64,
    pub segments: usize,
    pub reference: (f64, f64),
}

impl ParetoArchive {
    pub fn new(loss_max: f64, bits_max: f64, segments: usize) -> Result<Self> {
        normalize(0.0, loss_max, 0.0, bits_max)?;
        if segments == 0 {
            return Err(invalid("segment count must be at least 1"));
        }
        Ok(Self {
            entries: Vec::new(),
            loss_max,
            bits_max,
            segments,
            reference: (1.0, 1.0),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, cfg: &ModelQuantConfig) -> Option<usize> {
        self.entries.iter().position(|e| &e.config == cfg)
    }

    /// Adds an evaluated configuration and returns its id.
    pub fn push(&mut self, config: ModelQuantConfig, loss: f64, snapshot: usize) -> Result<usize> {
        if !loss.is_finite() {
            return Err(crate::Error::Numeric(format!("non-finite loss {loss}")));
        }
        let avg_bits = config.avg_bits();
        let (f1_norm, f2_norm) = normalize(loss, self.loss_max, avg_bits, self.bits_max)?;
        self.entries.push(ArchiveEntry {
            config,
            loss,
            avg_bits,
            f1_norm,
            f2_norm,
            snapshot,
        });
        Ok(self.entries.len() - 1)
    }

    pub fn point(&self, id: usize) -> (f64, f64) {
        let e = &self.entries[id];
        (e.f1_norm, e.f2_norm)
    }

    pub fn points(&self, ids: &[usize]) -> Vec<(f64, f64)> {
        ids.iter().map(|&i| self.point(i)).collect()
    }

    /// Normalized non-dominated points among `ids`.
    pub fn front(&self, ids: &[usize]) -> Vec<(f64, f64)> {
        let pts = self.points(ids);
        pareto_front(&pts).into_iter().map(|i| pts[i]).collect()
    }

    pub fn hypervolume(&self, ids: &[usize]) -> f64 {
        hypervolume_2d(&self.points(ids), self.reference)
    }

    /// Segment-wise filter of `ids`, returned as archive ids.
    pub fn filter(&self, ids: &[usize]) -> Vec<usize> {
        let pts = self.points(ids);
        segmented_filter(&pts, self.segments)
            .expect("segments validated")
            .into_iter()
            .map(|k| ids[k])
            .collect()
    }

    /// CSV with columns `config_id, avg_bits, loss, f1_norm, f2_norm,
    /// on_global_front, segment_index` over the entries in `ids`.
    pub fn write_csv(&self, ids: &[usize], out: impl Write) -> Result<()> {
        let pts = self.points(ids);
        let on_front: std::collections::HashSet<usize> = pareto_front(&pts).into_iter().collect();
        let lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "config_id",
            "avg_bits",
            "loss",
            "f1_norm",
            "f2_norm",
            "on_global_front",
            "segment_index",
        ])
        .map_err(csv_err)?;
        for (k, &id) in ids.iter().enumerate() {
            let e = &self.entries[id];
            w.write_record([
                id.to_string(),
                e.avg_bits.to_string(),
                e.loss.to_string(),
                e.f1_norm.to_string(),
                e.f2_norm.to_string(),
                u8::from(on_front.contains(&k)).to_string(),
                segment_index(e.f2_norm, lo, hi, self.segments).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_front(points: &[(f64, f64)]) -> Vec<usize> {
        (0..points.len())
            .filter(|&i| !points.iter().any(|&q| dominates(q, points[i])))
            .collect()
    }

    /// Fraction of a fine grid over the unit square that is dominated.
    fn grid_hv(points: &[(f64, f64)], n: usize) -> f64 {
        let mut count = 0usize;
        for i in 0..n {
            let x = (i as f64 + 0.5) / n as f64;
            for j in 0..n {
                let y = (j as f64 + 0.5) / n as f64;
                if points.iter().any(|p| p.0 <= x && p.1 <= y) {
                    count += 1;
                }
            }
        }
        count as f64 / (n * n) as f64
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize(2.0, 4.0, 8.625, 8.625).unwrap(), (0.5, 1.0));
        assert!((normalize_accuracy(85.0f64) - 0.15).abs() < 1e-15);
        assert!(normalize(1.0, 0.0, 1.0, 1.0).is_err());
        assert_eq!(normalize(9.0, 4.0, -1.0, 8.0).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn small_fronts() {
        assert_eq!(pareto_front(&[(0.2, 0.2), (0.3, 0.3)]), vec![0]);
        assert_eq!(pareto_front(&[(0.2, 0.5), (0.5, 0.2)]), vec![0, 1]);
        assert_eq!(pareto_front(&[(0.2, 0.5), (0.2, 0.5), (0.2, 0.6)]), vec![0, 1]);
    }

    #[test]
    fn front_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.random_range(1..=200);
            // Coarse values so ties and duplicates occur.
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.random_range(0..20) as f64 / 20.0, rng.random_range(0..20) as f64 / 20.0))
                .collect();
            assert_eq!(pareto_front(&pts), brute_front(&pts));
        }
    }

    #[test]
    fn worked_hypervolumes() {
        let r = (1.0f64, 1.0f64);
        assert_eq!(hypervolume_2d(&[(1.0, 1.0)], r), 0.0);
        assert!((hypervolume_2d(&[(0.3, 0.4), (0.6, 0.2)], r) - 0.50).abs() <= 1e-12);
        assert!((hypervolume_2d(&[(0.2, 0.9), (0.3, 0.4), (0.6, 0.2)], r) - 0.51).abs() <= 1e-12);
        let g = grid_hv(&[(0.3, 0.4), (0.6, 0.2)], 2000);
        assert!((g - 0.50).abs() < 1e-3);
        let g = grid_hv(&[(0.2, 0.9), (0.3, 0.4), (0.6, 0.2)], 2000);
        assert!((g - 0.51).abs() < 1e-3);
    }

    #[test]
    fn worked_hvi() {
        let front = [(0.3, 0.4), (0.6, 0.2)];
        let r = (1.0f64, 1.0f64);
        assert!((hvi((0.2, 0.9), &front, r) - 0.01).abs() <= 1e-12);
        assert_eq!(hvi((0.7, 0.7), &front, r), 0.0);
        assert_eq!(hvi((0.3, 0.4), &front, r), 0.0);
        assert_eq!(hvi((0.1, 1.2), &front, r), 0.0);
    }

    #[test]
    fn points_beyond_reference_are_ignored() {
        let r = (1.0f64, 1.0f64);
        assert_eq!(hypervolume_2d(&[(0.5, 1.5), (1.2, 0.1)], r), 0.0);
    }

    #[test]
    fn segment_survivor_is_kept() {
        // (0.6, 0.9) is dominated globally by (0.5, 0.1) but is alone in
        // the top segment.
        let pts = [(0.5, 0.1), (0.7, 0.12), (0.6, 0.9)];
        assert_eq!(pareto_front(&pts), vec![0]);
        assert_eq!(segmented_filter(&pts, 2).unwrap(), vec![0, 2]);
        assert_eq!(segmented_filter(&pts, 1).unwrap(), vec![0]);
    }

    #[test]
    fn segment_bounds() {
        assert_eq!(segment_index(1.0, 0.0, 1.0, 4), 3);
        assert_eq!(segment_index(0.0, 0.0, 1.0, 4), 0);
        assert_eq!(segment_index(0.25, 0.0, 1.0, 4), 1);
        assert_eq!(segment_index(0.3, 0.3, 0.3, 4), 0);
    }

    #[test]
    fn archive_csv_columns() {
        use crate::qconfig::{canonical_ladder, ModelQuantConfig};
        let l = canonical_ladder();
        let mk = |r: usize| ModelQuantConfig::uniform(l.entry(r), vec![(32, 32)]).unwrap();
        let mut a = ParetoArchive::new(2.0, 8.625, 4).unwrap();
        a.push(mk(0), 1.5, 0).unwrap();
        a.push(mk(400), 0.5, 0).unwrap();
        a.push(mk(200), 1.9, 0).unwrap();
        let mut buf = Vec::new();
        a.write_csv(&[0, 1, 2], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "config_id,avg_bits,loss,f1_norm,f2_norm,on_global_front,segment_index");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with(",1,0"));
        assert!(lines[2].ends_with(",1,3"));
        assert!(lines[3].contains(",0,"));
    }
}
