use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EmbeddingTable;
use crate::{Error, Result};

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as columns. Each vector is signed so that its entry of
/// largest magnitude is positive.
pub fn symmetric_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let mut a = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        let mut diag = 0.0;
        for p in 0..n {
            diag += a[[p, p]] * a[[p, p]];
            for q in p + 1..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        if off == 0.0 || off <= 1e-32 * diag {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (kp, kq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * kp - s * kq;
                    a[[k, q]] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * pk - s * qk;
                    a[[q, k]] = s * pk + c * qk;
                }
                for k in 0..n {
                    let (kp, kq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * kp - s * kq;
                    v[[k, q]] = s * kp + c * kq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[[i, i]]).collect();
    let mut vectors = v.select(Axis(1), &order);
    for mut col in vectors.columns_mut() {
        let lead = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
    (values, vectors)
}

/// Leading principal axes of a point cloud (rows are points).
#[derive(Clone, Debug, PartialEq)]
pub struct Principal {
    pub mean: Array1<f64>,
    /// Unit axes as columns.
    pub components: Array2<f64>,
    /// Sample variance along each axis.
    pub variances: Vec<f64>,
    /// Sum of all sample variances.
    pub total_variance: f64,
}

impl Principal {
    pub fn project(&self, data: &Array2<f64>) -> Array2<f64> {
        (data - &self.mean).dot(&self.components)
    }
}

pub fn principal_components(data: &Array2<f64>, n_components: usize) -> Result<Principal> {
    let m = data.nrows();
    if m < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    let mean = data.mean_axis(Axis(0)).expect("nonempty");
    let centered = data - &mean;
    let cov = centered.t().dot(&centered) / (m - 1) as f64;
    let total_variance: f64 = cov.diag().sum();
    if total_variance <= 0.0 {
        return Err(Error::Degenerate);
    }
    let (values, vectors) = symmetric_eigen(&cov);
    let k = n_components.min(values.len());
    Ok(Principal {
        mean,
        components: vectors.slice(ndarray::s![.., ..k]).to_owned(),
        variances: values[..k].iter().map(|&x| x.max(0.0)).collect(),
        total_variance,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaPoint {
    pub item_id: String,
    pub tag: String,
    pub source: String,
    pub x: f64,
    pub y: f64,
}

/// Projects up to `sample_n` items from each of the `top_t` most frequent
/// tags onto their own top two principal axes. `sources` labels each item
/// (items without a label get "unknown").
pub fn pca_project(
    table: &EmbeddingTable,
    tags: &HashMap<String, String>,
    sources: &HashMap<String, String>,
    top_t: usize,
    sample_n: usize,
    seed: u64,
) -> Result<Vec<PcaPoint>> {
    let mut by_tag: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for id in table.ids() {
        if let Some(tag) = tags.get(id) {
            by_tag.entry(tag).or_default().push(id);
        }
    }
    let mut ranked: Vec<(&str, Vec<&str>)> = by_tag.into_iter().collect();
    ranked.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(b.0)));
    ranked.truncate(top_t);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<(&str, &str)> = Vec::new();
    for (tag, mut ids) in ranked {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        ids.truncate(sample_n);
        ids.sort_unstable();
        chosen.extend(ids.into_iter().map(|id| (tag, id)));
    }
    let rows: Vec<usize> = chosen.iter().map(|(_, id)| table.row_of(id).expect("id from table")).collect();
    let data = table.vectors().select(Axis(0), &rows);
    let pc = principal_components(&data, 2)?;
    let proj = pc.project(&data);
    Ok(chosen
        .iter()
        .enumerate()
        .map(|(i, (tag, id))| PcaPoint {
            item_id: id.to_string(),
            tag: tag.to_string(),
            source: sources.get(*id).cloned().unwrap_or_else(|| "unknown".into()),
            x: proj[[i, 0]],
            y: if proj.ncols() > 1 { proj[[i, 1]] } else { 0.0 },
        })
        .collect())
}

pub fn write_pca_csv<W: Write>(mut w: W, header: &str, points: &[PcaPoint]) -> std::io::Result<()> {
    for line in header.lines() {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "item_id,tag,source,x,y")?;
    for p in points {
        writeln!(w, "{},{},{},{:.9e},{:.9e}", p.item_id, p.tag, p.source, p.x, p.y)?;
    }
    Ok(())
}
