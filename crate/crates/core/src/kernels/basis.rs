use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ExpKernelParams;
use crate::error::{Error, Result};
use crate::field::SiteSet;
use crate::io;

const CLIP_RATIO: f64 = 1e-10;

/// Leading eigen-pairs of a correlation (or covariance) matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    /// `n × L`, orthonormal columns.
    pub vectors: DMatrix<f64>,
    /// Descending, strictly positive.
    pub values: DVector<f64>,
    /// Landmark indices used for a Nyström approximation; empty when exact.
    pub landmark_ids: Vec<usize>,
}

impl EigenBasis {
    pub fn rank(&self) -> usize {
        self.values.len()
    }

    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_exact(&self) -> bool {
        self.landmark_ids.is_empty()
    }

    /// `E Λ Eᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.n(), self.rank(), |i, l| {
            self.vectors[(i, l)] * self.values[l]
        });
        &scaled * self.vectors.transpose()
    }

    /// `max |EᵀE − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.vectors.transpose() * &self.vectors;
        let mut worst = 0.0f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Keeps the leading `rank` pairs.
    pub fn truncated(&self, rank: usize) -> Result<Self> {
        if rank == 0 || rank > self.rank() {
            return Err(Error::Input(format!(
                "cannot truncate a rank-{} basis to rank {rank}",
                self.rank()
            )));
        }
        Ok(Self {
            vectors: self.vectors.columns(0, rank).into_owned(),
            values: self.values.rows(0, rank).into_owned(),
            landmark_ids: self.landmark_ids.clone(),
        })
    }

    /// Writes `<stem>.values.csv` (eigenvalues, plus landmark ids when present)
    /// and `<stem>.vectors.csv` (one row per site).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let vpath = sidecar(stem, "values");
        io::atomic_write(&vpath, |w| {
            writeln!(w, "eigenvalue")?;
            for v in self.values.iter() {
                writeln!(w, "{}", io::fmt_f64(*v))?;
            }
            Ok(())
        })?;
        let lpath = sidecar(stem, "landmarks");
        io::atomic_write(&lpath, |w| {
            writeln!(w, "landmark")?;
            for id in &self.landmark_ids {
                writeln!(w, "{id}")?;
            }
            Ok(())
        })?;
        let epath = sidecar(stem, "vectors");
        io::atomic_write(&epath, |w| {
            let header: Vec<String> = (1..=self.rank()).map(|l| format!("e{l}")).collect();
            writeln!(w, "{}", header.join(","))?;
            for i in 0..self.n() {
                let row: Vec<String> =
                    (0..self.rank()).map(|l| io::fmt_f64(self.vectors[(i, l)])).collect();
                writeln!(w, "{}", row.join(","))?;
            }
            Ok(())
        })
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let values = io::read_numeric_table(&sidecar(stem, "values"))?;
        let landmarks = io::read_numeric_table(&sidecar(stem, "landmarks"))?;
        let vectors = io::read_numeric_table(&sidecar(stem, "vectors"))?;
        let l = values.len();
        if vectors.iter().any(|r| r.len() != l) {
            return Err(Error::Input(format!(
                "eigenvector file has rows of the wrong width (expected {l})"
            )));
        }
        let n = vectors.len();
        let landmark_ids = landmarks
            .iter()
            .map(|r| {
                let v = r[0];
                if v < 0.0 || v.fract() != 0.0 {
                    Err(Error::Input(format!("invalid landmark index {v}")))
                } else {
                    Ok(v as usize)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            vectors: DMatrix::from_fn(n, l, |i, j| vectors[i][j]),
            values: DVector::from_iterator(l, values.iter().map(|r| r[0])),
            landmark_ids,
        })
    }
}

fn sidecar(stem: &Path, kind: &str) -> std::path::PathBuf {
    let mut name = stem.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(format!(".{kind}.csv"));
    stem.with_file_name(name)
}

/// Sorted (descending) eigen-decomposition of a symmetric matrix.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Number of leading values above the clipping threshold, capped at `rank`.
fn clipped_rank(values: &[f64], rank: usize, what: &str) -> usize {
    let cut = CLIP_RATIO * values[0];
    let keep = values.iter().take(rank).take_while(|&&v| v > cut).count();
    if keep < rank {
        log::warn!("{what}: {} eigenvalues below {CLIP_RATIO:e}·λ₁ dropped, rank reduced to {keep}", rank - keep);
    }
    keep
}

fn check_leading(values: &[f64], what: &str) -> Result<()> {
    let top = values.first().copied().unwrap_or(f64::NAN);
    if !(top.is_finite() && top > 0.0) {
        let bottom = values.last().copied().unwrap_or(f64::NAN);
        return Err(Error::Decomposition(format!(
            "{what} is numerically singular: largest eigenvalue {top:e}, smallest {bottom:e}"
        )));
    }
    Ok(())
}

/// Exact leading `rank` eigen-pairs of a dense symmetric matrix.
pub fn exact_eigs(c: &DMatrix<f64>, rank: usize) -> Result<EigenBasis> {
    let n = c.nrows();
    if n == 0 || c.ncols() != n {
        return Err(Error::Input(format!("expected a square matrix, got {}×{}", n, c.ncols())));
    }
    if rank == 0 || rank > n {
        return Err(Error::Input(format!("rank {rank} outside 1..={n}")));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::Decomposition("matrix has non-finite entries".into()));
    }
    let (values, vectors) = sorted_eigen(c.clone());
    check_leading(&values, "covariance matrix")?;
    let keep = clipped_rank(&values, rank, "exact eigen-decomposition");
    Ok(EigenBasis {
        vectors: vectors.columns(0, keep).into_owned(),
        values: DVector::from_column_slice(&values[..keep]),
        landmark_ids: Vec::new(),
    })
}

/// Uniform random landmark subset of size `m` out of `n`, sorted.
pub fn select_landmarks(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::Input(format!("cannot pick {m} landmarks from {n} sites")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = sample(&mut rng, n, m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Nyström approximation of the leading `rank` eigen-pairs of the covariance
/// matrix over `sites`.
///
/// The landmark block `W = UΣUᵀ` is extended to `G = C_nm U Σ^{-1/2}` so that
/// `GGᵀ = C_nm W⁺ C_mn`; the returned pairs are the exact leading eigen-pairs
/// of that approximation (thin QR of `G`), so the columns are orthonormal to
/// rounding error.
pub fn nystrom_eigs(
    sites: &SiteSet<f64>,
    params: &ExpKernelParams<f64>,
    landmarks: &[usize],
    rank: usize,
) -> Result<EigenBasis> {
    let n = sites.len();
    let m = landmarks.len();
    if rank == 0 || rank > m || m > n {
        return Err(Error::Input(format!(
            "need 1 ≤ rank ≤ landmarks ≤ n, got rank {rank}, {m} landmarks, n {n}"
        )));
    }
    let mut seen = vec![false; n];
    for &id in landmarks {
        if id >= n || seen[id] {
            return Err(Error::Input(format!("landmark index {id} out of range or repeated")));
        }
        seen[id] = true;
    }
    let lm = sites.subset(landmarks);
    let w = super::cov_matrix(&lm, params)?;
    let (sv, su) = sorted_eigen(w);
    check_leading(&sv, "landmark covariance block")?;
    let k = clipped_rank(&sv, m, "landmark covariance block");

    let cnm = super::cross_cov(sites, &lm, params);
    let mut us = su.columns(0, k).into_owned();
    for (j, mut col) in us.column_iter_mut().enumerate() {
        col /= sv[j].sqrt();
    }
    let g = cnm * us;
    let qr = g.qr();
    let q = qr.q();
    let r = qr.r();
    let (rv, ru) = sorted_eigen(&r * r.transpose());
    check_leading(&rv, "Nyström core")?;
    let keep = clipped_rank(&rv, rank.min(k), "Nyström extension");
    let vectors = q * ru.columns(0, keep);
    Ok(EigenBasis {
        vectors,
        values: DVector::from_column_slice(&rv[..keep]),
        landmark_ids: landmarks.to_vec(),
    })
}
