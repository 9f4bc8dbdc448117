//! Per-client multi-prototypes and the server-side prototype pool.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{self, KMeansConfig};
use crate::seeds;
use crate::tensor::Matrix;

/// Cluster centroids of one client's per-class embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPrototypes {
    pub client_id: usize,
    pub per_class: BTreeMap<usize, Matrix>,
}

/// Prototype rows per class, gathered from every client and padded.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrototypePool {
    pub per_class: BTreeMap<usize, Matrix>,
    pub round: usize,
    /// Leading rows of a class that came from clients; the rest are padding.
    /// Classes without an entry have no padding.
    #[serde(default)]
    pub real_rows: BTreeMap<usize, usize>,
}

/// On-disk form of a pool: `{round, classes: {j: [[..], ..]}, real_rows: {j: n}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSnapshot {
    pub round: usize,
    pub classes: BTreeMap<usize, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub real_rows: BTreeMap<usize, usize>,
}

impl PrototypePool {
    pub fn is_empty(&self) -> bool {
        self.per_class.is_empty()
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_class.keys().copied()
    }

    /// Number of client-contributed rows of class `j` (0 when absent).
    pub fn real_row_count(&self, j: usize) -> usize {
        match self.per_class.get(&j) {
            Some(m) => self.real_rows.get(&j).copied().unwrap_or(m.rows()).min(m.rows()),
            None => 0,
        }
    }

    /// Pads class `j` to `target` rows with its mean, remembering which rows are real.
    pub fn pad_class_to(&mut self, j: usize, target: usize) -> Result<()> {
        let real = self.real_row_count(j);
        let rows = self.per_class.get_mut(&j).ok_or_else(|| Error::invalid(format!("class {j} not in pool")))?;
        let mean = rows.select_rows(&(0..real).collect::<Vec<_>>()).mean_row().ok_or(Error::Empty("prototype rows to pad"))?;
        if target < rows.rows() {
            return Err(Error::invalid(format!("padding target {target} is below the current {} rows", rows.rows())));
        }
        for _ in rows.rows()..target {
            rows.push_row(&mean)?;
        }
        self.real_rows.insert(j, real);
        Ok(())
    }

    pub fn embed_dim(&self) -> Option<usize> {
        self.per_class.values().next().map(Matrix::cols)
    }

    /// All rows stacked in class order, with the class of each row.
    pub fn stacked(&self) -> (Matrix, Vec<usize>) {
        let mut rows = Matrix::zeros(0, 0);
        let mut classes = Vec::new();
        for (&j, m) in &self.per_class {
            rows.vstack(m).expect("pool rows share one width");
            classes.extend(std::iter::repeat(j).take(m.rows()));
        }
        (rows, classes)
    }

    /// Mean row of each class (the single global prototype used by FedProto).
    pub fn class_means(&self) -> BTreeMap<usize, Vec<f64>> {
        self.per_class
            .iter()
            .filter_map(|(&j, m)| m.mean_row().map(|mu| (j, mu)))
            .collect()
    }

    pub fn snapshot(&self) -> PoolSnapshot {
        PoolSnapshot {
            round: self.round,
            classes: self
                .per_class
                .iter()
                .map(|(&j, m)| (j, m.iter_rows().map(<[f64]>::to_vec).collect()))
                .collect(),
            real_rows: self.real_rows.clone(),
        }
    }

    pub fn from_snapshot(s: &PoolSnapshot) -> Result<Self> {
        let per_class = s
            .classes
            .iter()
            .map(|(&j, rows)| Ok((j, Matrix::from_rows(rows)?)))
            .collect::<Result<_>>()?;
        Ok(PrototypePool { per_class, round: s.round, real_rows: s.real_rows.clone() })
    }
}

/// Groups embedding rows by label.
pub fn embeddings_by_class(embeddings: &Matrix, labels: &[usize]) -> BTreeMap<usize, Matrix> {
    let mut idx: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        idx.entry(y).or_default().push(i);
    }
    idx.into_iter().map(|(j, rows)| (j, embeddings.select_rows(&rows))).collect()
}

/// Clusters each class's embeddings into at most `k` prototypes.
///
/// With `warm` set and a previous centroid set of the same size for a class,
/// Lloyd starts from those centroids instead of a random draw.
pub fn compute_local_prototypes(
    client_id: usize,
    embeddings_by_class: &BTreeMap<usize, Matrix>,
    k: usize,
    cfg: &KMeansConfig,
    seed: u64,
    warm: Option<&LocalPrototypes>,
) -> Result<LocalPrototypes> {
    let mut per_class = BTreeMap::new();
    for (&j, points) in embeddings_by_class {
        if points.rows() == 0 {
            return Err(Error::Empty("class embeddings"));
        }
        let kk = k.min(points.rows());
        let prev = warm.and_then(|w| w.per_class.get(&j)).filter(|c| c.rows() == kk && kk > 1);
        let res = match prev {
            Some(init) => kmeans::kmeans_with_init(points, init.clone(), cfg.max_iter, cfg.tol)?,
            None => kmeans::kmeans_restarts(
                points,
                kk,
                cfg.max_iter,
                cfg.tol,
                cfg.restarts,
                seeds::derive(seed, &[j as u64]),
            )?,
        };
        per_class.insert(j, res.centroids);
    }
    Ok(LocalPrototypes { client_id, per_class })
}

/// Appends copies of the row mean until `rows` has `target_count` rows.
pub fn pad_class(rows: &Matrix, target_count: usize) -> Result<Matrix> {
    let mean = rows.mean_row().ok_or(Error::Empty("prototype rows to pad"))?;
    if target_count < rows.rows() {
        return Err(Error::invalid(format!(
            "padding target {target_count} is below the current {} rows",
            rows.rows()
        )));
    }
    let mut out = rows.clone();
    for _ in rows.rows()..target_count {
        out.push_row(&mean)?;
    }
    Ok(out)
}

/// Stacks every client's prototypes per class (in client order) and pads each
/// present class to `num_clients · k` rows. Classes no client owns are absent.
/// The pool remembers how many rows per class are real.
pub fn aggregate_pool(
    updates: &[&LocalPrototypes],
    num_clients: usize,
    k: usize,
    num_classes: usize,
    round: usize,
) -> Result<PrototypePool> {
    if updates.len() > num_clients {
        return Err(Error::invalid(format!(
            "{} prototype updates for {num_clients} clients",
            updates.len()
        )));
    }
    let mut ordered: Vec<&LocalPrototypes> = updates.to_vec();
    ordered.sort_by_key(|u| u.client_id);
    if ordered.windows(2).any(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::invalid("duplicate client in prototype updates"));
    }
    let mut stacked: BTreeMap<usize, Matrix> = BTreeMap::new();
    for u in ordered {
        for (&j, m) in &u.per_class {
            if j >= num_classes {
                return Err(Error::invalid(format!("class {j} outside {num_classes} classes")));
            }
            if m.rows() > k {
                return Err(Error::invalid(format!(
                    "client {} sent {} prototypes for class {j} (K = {k})",
                    u.client_id,
                    m.rows()
                )));
            }
            stacked.entry(j).or_insert_with(|| Matrix::zeros(0, 0)).vstack(m)?;
        }
    }
    let target = num_clients * k;
    let real_rows = stacked.iter().map(|(&j, m)| (j, m.rows())).collect();
    let per_class = stacked
        .into_iter()
        .map(|(j, m)| Ok((j, pad_class(&m, target)?)))
        .collect::<Result<_>>()?;
    Ok(PrototypePool { per_class, round, real_rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn local(client_id: usize, classes: &[(usize, &[[f64; 2]])]) -> LocalPrototypes {
        LocalPrototypes {
            client_id,
            per_class: classes
                .iter()
                .map(|(j, rows)| (*j, Matrix::from_rows(rows).unwrap()))
                .collect(),
        }
    }

    #[test]
    fn pad_class_cases() {
        let one = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let p = pad_class(&one, 3).unwrap();
        assert!(p.iter_rows().all(|r| r == [1.0, 2.0]));
        let two = Matrix::from_rows(&[[0.0, 0.0], [2.0, 2.0]]).unwrap();
        assert_eq!(pad_class(&two, 2).unwrap(), two);
        assert_eq!(pad_class(&two, 3).unwrap().row(2), &[1.0, 1.0]);
        assert!(pad_class(&Matrix::zeros(0, 2), 3).is_err());
        assert!(pad_class(&two, 1).is_err());
    }

    #[test]
    fn aggregation_stacks_and_pads() {
        let a = local(0, &[(0, &[[0.0, 0.0], [1.0, 1.0]])]);
        let b = local(1, &[(0, &[[2.0, 2.0], [3.0, 3.0]]), (1, &[[4.0, 0.0], [0.0, 4.0]])]);
        let pool = aggregate_pool(&[&b, &a], 2, 2, 3, 1).unwrap();
        assert_eq!(pool.per_class[&0].rows(), 4);
        assert_eq!(pool.per_class[&0].row(0), &[0.0, 0.0]);
        let c1 = &pool.per_class[&1];
        assert_eq!(c1.rows(), 4);
        assert_eq!(c1.row(2), &[2.0, 2.0]);
        assert_eq!(c1.row(3), &[2.0, 2.0]);
        assert!(!pool.per_class.contains_key(&2));
        assert_eq!(pool.real_row_count(1), 2);
        assert_eq!(pool.real_row_count(2), 0);
    }

    #[test]
    fn pad_class_to_keeps_the_mean_of_real_rows() {
        let mut pool = PrototypePool::default();
        pool.per_class.insert(0, Matrix::from_rows(&[[0.0, 0.0], [2.0, 4.0]]).unwrap());
        pool.pad_class_to(0, 3).unwrap();
        pool.pad_class_to(0, 5).unwrap();
        assert_eq!(pool.real_row_count(0), 2);
        assert!(pool.per_class[&0].iter_rows().skip(2).all(|r| r == [1.0, 2.0]));
        assert!(pool.pad_class_to(0, 1).is_err());
        assert!(pool.pad_class_to(4, 3).is_err());
    }

    #[test]
    fn aggregation_rejects_oversized_updates() {
        let a = local(0, &[(0, &[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])]);
        assert!(aggregate_pool(&[&a], 1, 2, 2, 0).is_err());
        let b = local(0, &[(5, &[[0.0, 0.0]])]);
        assert!(aggregate_pool(&[&b], 1, 2, 2, 0).is_err());
    }

    #[test]
    fn local_prototypes_k1_is_class_mean_and_clamps() {
        let by_class: BTreeMap<usize, Matrix> = [
            (0, Matrix::from_rows(&[[1.0, 0.0], [3.0, 2.0]]).unwrap()),
            (4, Matrix::from_rows(&[[7.0, 7.0]]).unwrap()),
        ]
        .into();
        let cfg = KMeansConfig::default();
        let p = compute_local_prototypes(3, &by_class, 1, &cfg, 9, None).unwrap();
        assert_eq!(p.per_class[&0].row(0), &[2.0, 1.0]);
        let p2 = compute_local_prototypes(3, &by_class, 2, &cfg, 9, None).unwrap();
        assert_eq!(p2.per_class[&4].rows(), 1);
        assert_eq!(p2.per_class[&4].row(0), &[7.0, 7.0]);
        assert!(!p2.per_class.contains_key(&1));
    }

    #[test]
    fn snapshot_round_trip() {
        let a = local(0, &[(0, &[[0.5, 0.25]]), (2, &[[1.0, -1.0]])]);
        let pool = aggregate_pool(&[&a], 2, 1, 3, 7).unwrap();
        let json = serde_json::to_string(&pool.snapshot()).unwrap();
        assert!(json.starts_with("{\"round\":7,\"classes\":{\"0\":"));
        let back: PoolSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(PrototypePool::from_snapshot(&back).unwrap(), pool);
    }
}
