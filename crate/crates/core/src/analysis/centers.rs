use serde::{Deserialize, Serialize};

use super::features::sq_dist;
use crate::error::{Error, Result};

/// Per-class mean coordinates and the pairwise L2 distances between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCenters {
    pub dims: usize,
    /// `centers[k]` has length `dims`.
    pub centers: Vec<Vec<f64>>,
    /// Row-major `K × K`.
    pub distances: Vec<Vec<f64>>,
}

impl ClassCenters {
    pub fn num_classes(&self) -> usize {
        self.centers.len()
    }
}

/// Centers of `points` (row-major, `dims` wide) grouped by `labels`.
pub fn class_centers(points: &[f64], dims: usize, labels: &[usize], num_classes: usize) -> Result<ClassCenters> {
    if dims == 0 || points.len() != labels.len() * dims {
        return Err(Error::Input(format!("{} coordinates do not form {} rows of width {dims}", points.len(), labels.len())));
    }
    let mut sums = vec![vec![0.0; dims]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::Input(format!("label {l} at row {i} outside {num_classes} classes")));
        }
        counts[l] += 1;
        sums[l].iter_mut().zip(&points[i * dims..(i + 1) * dims]).for_each(|(s, p)| *s += p);
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Input(format!("class {missing} has no points")));
    }
    let centers: Vec<Vec<f64>> =
        sums.into_iter().zip(&counts).map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect()).collect();
    let distances = centers
        .iter()
        .map(|a| centers.iter().map(|b| sq_dist(a, b).sqrt()).collect())
        .collect();
    Ok(ClassCenters { dims, centers, distances })
}

/// The `k` classes whose centers are closest to `source`, ascending by distance, ties by index.
pub fn nearest_classes(centers: &ClassCenters, source: usize, k: usize) -> Result<Vec<(usize, f64)>> {
    let n = centers.num_classes();
    if source >= n {
        return Err(Error::Input(format!("source class {source} outside {n} classes")));
    }
    if k == 0 || k + 1 > n {
        return Err(Error::Input(format!("k = {k} not in [1, K-1 = {}]", n.saturating_sub(1))));
    }
    let row = &centers.distances[source];
    let mut others: Vec<(usize, f64)> = (0..n).filter(|&c| c != source).map(|c| (c, row[c])).collect();
    others.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    others.truncate(k);
    Ok(others)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn means_and_singletons() {
        let c = class_centers(&[0.0, 0.0, 2.0, 0.0, 5.0, 5.0], 2, &[0, 0, 1], 2).unwrap();
        assert_eq!(c.centers, vec![vec![1.0, 0.0], vec![5.0, 5.0]]);
        assert_eq!(c.distances[0][0], 0.0);
        assert_eq!(c.distances[0][1], c.distances[1][0]);
    }

    #[test]
    fn single_class_gives_zero_matrix() {
        let c = class_centers(&[1.0, 2.0], 2, &[0], 1).unwrap();
        assert_eq!(c.distances, vec![vec![0.0]]);
    }

    #[test]
    fn missing_class_is_an_input_error() {
        let err = class_centers(&[1.0, 2.0], 2, &[0], 2).unwrap_err();
        assert_eq!(err.code(), "input");
    }

    #[test]
    fn ranking_on_a_line() {
        let c = class_centers(&[0.0, 0.0, 3.0, 0.0, 1.0, 0.0], 2, &[0, 1, 2], 3).unwrap();
        let near = nearest_classes(&c, 0, 2).unwrap();
        assert_eq!(near, vec![(2, 1.0), (1, 3.0)]);
        assert_eq!(nearest_classes(&c, 0, 3).unwrap_err().code(), "input");
        assert_eq!(nearest_classes(&c, 0, 0).unwrap_err().code(), "input");
        let two = class_centers(&[0.0, 1.0], 1, &[0, 1], 2).unwrap();
        assert_eq!(nearest_classes(&two, 1, 1).unwrap(), vec![(0, 1.0)]);
    }

    #[test]
    fn ties_break_by_index() {
        let c = class_centers(&[0.0, 1.0, -1.0], 1, &[0, 2, 1], 3).unwrap();
        assert_eq!(nearest_classes(&c, 0, 2).unwrap(), vec![(1, 1.0), (2, 1.0)]);
    }
}
