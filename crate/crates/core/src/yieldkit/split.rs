use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::boxes::AnnotatedImage;
use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

/// Ground-truth count bins. With upper bounds `[0, 20, 50]` the strata are
/// `{0}`, `1–20`, `21–50` and `>50`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrataBins {
    pub upper: Vec<usize>,
}

impl Default for StrataBins {
    fn default() -> Self {
        StrataBins { upper: vec![0, 20, 50] }
    }
}

impl StrataBins {
    pub fn stratum(&self, count: usize) -> usize {
        self.upper.iter().position(|&u| count <= u).unwrap_or(self.upper.len())
    }

    pub fn len(&self) -> usize {
        self.upper.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Image indices per split, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub stratified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl SplitAssignment {
    pub fn parts(&self) -> [&[usize]; 3] {
        [&self.train, &self.val, &self.test]
    }
}

/// Largest-remainder apportionment of `n` items over `ratios`; ties in the
/// remainder go to the earlier split.
pub fn apportion(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = n - out.iter().sum::<usize>().min(n);
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[k] += 1;
        left -= 1;
    }
    out
}

fn validate_ratios(ratios: &[f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

/// Per-stratum split sizes: each stratum gets the floor of its exact share
/// plus at most one extra image per split, with extras chosen so every
/// split's total matches the global apportionment. Returns `None` when no
/// such table exists.
fn stratum_table(sizes: &[usize], ratios: &[f64; 3], totals: &[usize]) -> Option<Vec<[usize; 3]>> {
    let mut table: Vec<[usize; 3]> =
        sizes.iter().map(|&n| std::array::from_fn(|k| (ratios[k] * n as f64).floor() as usize)).collect();
    let mut row_need: Vec<usize> = sizes.iter().zip(&table).map(|(&n, t)| n - t.iter().sum::<usize>()).collect();
    let mut col_need: Vec<isize> = (0..3).map(|k| totals[k] as isize - table.iter().map(|t| t[k] as isize).sum::<isize>()).collect();
    if col_need.iter().any(|&c| c < 0) {
        return None;
    }
    // Greedy 0/1 fill with prescribed margins: largest row demand first, each
    // into the columns with the most remaining need.
    let mut rows: Vec<usize> = (0..sizes.len()).collect();
    rows.sort_by(|&a, &b| row_need[b].cmp(&row_need[a]).then(a.cmp(&b)));
    for s in rows {
        let mut cols = [0usize, 1, 2];
        cols.sort_by(|&a, &b| col_need[b].cmp(&col_need[a]).then(a.cmp(&b)));
        for &k in cols.iter().take(row_need[s]) {
            if col_need[k] <= 0 {
                return None;
            }
            table[s][k] += 1;
            col_need[k] -= 1;
        }
        row_need[s] = 0;
    }
    col_need.iter().all(|&c| c == 0).then_some(table)
}

/// Seeded image-level split, stratified by ground-truth count bins.
///
/// Split totals follow the global largest-remainder apportionment, and each
/// stratum's share of every split is within one image of its exact ratio.
/// If any populated stratum is smaller than the number of splits, the split
/// falls back to unstratified and says so in `warning`.
pub fn stratified_split<R: Rng + ?Sized>(
    images: &[AnnotatedImage],
    ratios: [f64; 3],
    bins: &StrataBins,
    rng: &mut R,
) -> Result<SplitAssignment> {
    validate_ratios(&ratios)?;
    if images.len() < 10 {
        return Err(Error::param(format!("need at least 10 images to split, got {}", images.len())));
    }
    let totals = apportion(images.len(), &ratios);
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); bins.len()];
    for (i, img) in images.iter().enumerate() {
        strata[bins.stratum(img.ground_truth.len())].push(i);
    }
    strata.retain(|s| !s.is_empty());

    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let small = sizes.iter().any(|&n| n < ratios.len());
    let table = if small { None } else { stratum_table(&sizes, &ratios, &totals) };
    let (stratified, warning, groups, table) = match table {
        Some(t) => (true, None, strata, t),
        None => {
            let reason = if small { "a stratum has fewer images than splits" } else { "no per-stratum table fits the split totals" };
            let all: Vec<usize> = (0..images.len()).collect();
            (false, Some(format!("{reason}; split unstratified")), vec![all], vec![[totals[0], totals[1], totals[2]]])
        }
    };

    let mut parts: [Vec<usize>; 3] = Default::default();
    for (mut group, counts) in groups.into_iter().zip(table) {
        group.shuffle(rng);
        let mut it = group.into_iter();
        for (k, part) in parts.iter_mut().enumerate() {
            part.extend(it.by_ref().take(counts[k]));
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    let [train, val, test] = parts;
    Ok(SplitAssignment { train, val, test, stratified, warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn images(counts: &[usize]) -> Vec<AnnotatedImage> {
        let b = super::super::boxes::BoundingBox::new(0.5, 0.5, 0.1, 0.1).unwrap();
        counts.iter().enumerate().map(|(i, &c)| AnnotatedImage::new(format!("i{i}"), 10, 10, vec![b; c])).collect()
    }

    #[test]
    fn paper_dataset_sizes() {
        let imgs = images(&vec![3; 1090]);
        let s = stratified_split(&imgs, DEFAULT_RATIOS, &StrataBins::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (872, 109, 109));
        assert!(s.stratified);
    }

    #[test]
    fn bins() {
        let b = StrataBins::default();
        assert_eq!([0, 1, 20, 21, 50, 51].map(|c| b.stratum(c)), [0, 1, 1, 2, 2, 3]);
    }

    #[test]
    fn apportion_sums() {
        assert_eq!(apportion(1090, &DEFAULT_RATIOS), vec![872, 109, 109]);
        assert_eq!(apportion(11, &DEFAULT_RATIOS), vec![9, 1, 1]);
        assert_eq!(apportion(15, &DEFAULT_RATIOS), vec![12, 2, 1]);
    }

    #[test]
    fn tiny_stratum_degrades() {
        let mut counts = vec![0; 20];
        counts.push(100);
        let s = stratified_split(&images(&counts), DEFAULT_RATIOS, &StrataBins::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(!s.stratified && s.warning.is_some());
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 21);
    }

    #[test]
    fn bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(stratified_split(&images(&[1; 9]), DEFAULT_RATIOS, &StrataBins::default(), &mut rng).is_err());
        assert!(stratified_split(&images(&[1; 20]), [0.5, 0.5, 0.5], &StrataBins::default(), &mut rng).is_err());
    }
}
