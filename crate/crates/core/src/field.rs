//! Sites, regular grids, gridded observation frames and the distance
//! primitives every estimator is built on.
//!
//! Coordinates are planar. A dataset declares its own unit (metres, grid
//! cells, degrees) and every kernel range is read in that unit.

use std::collections::HashSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site<T> {
    pub x: T,
    pub y: T,
    pub id: usize,
}

impl<T: Real> Site<T> {
    pub fn new(x: T, y: T, id: usize) -> Self {
        Self { x, y, id }
    }

    #[inline]
    pub fn distance(&self, other: &Site<T>) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    #[inline]
    pub fn distance_to(&self, x: T, y: T) -> T {
        (self.x - x).hypot(self.y - y)
    }
}

/// A collection of sites with unique ids and finite coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSet<T> {
    sites: Vec<Site<T>>,
}

impl<T: Real> SiteSet<T> {
    pub fn new(sites: Vec<Site<T>>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(sites.len());
        for s in &sites {
            if !s.x.is_finite() || !s.y.is_finite() {
                return Err(Error::Input(format!(
                    "site {} has non-finite coordinates",
                    s.id
                )));
            }
            if !seen.insert(s.id) {
                return Err(Error::Input(format!("duplicate site id {}", s.id)));
            }
        }
        Ok(Self { sites })
    }

    /// Builds a set from coordinates, numbering sites `0..n`.
    pub fn from_coords(coords: &[(T, T)]) -> Result<Self> {
        Self::new(
            coords
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| Site::new(x, y, i))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn as_slice(&self) -> &[Site<T>] {
        &self.sites
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Site<T>> {
        self.sites.iter()
    }

    pub fn get(&self, i: usize) -> &Site<T> {
        &self.sites[i]
    }

    /// Subset by position, keeping the original ids.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            sites: idx.iter().map(|&i| self.sites[i]).collect(),
        }
    }

    pub fn max_distance(&self) -> T {
        let mut best = T::zero();
        for i in 0..self.sites.len() {
            for j in (i + 1)..self.sites.len() {
                best = best.max(self.sites[i].distance(&self.sites[j]));
            }
        }
        best
    }
}

impl<T> std::ops::Index<usize> for SiteSet<T> {
    type Output = Site<T>;
    fn index(&self, i: usize) -> &Site<T> {
        &self.sites[i]
    }
}

/// Regular grid, stored row-major: cell `(ix, iy)` has index `iy * nx + ix`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<T> {
    pub origin: (T, T),
    pub cell_size: T,
    pub nx: usize,
    pub ny: usize,
}

impl<T: Real> GridSpec<T> {
    pub fn new(origin: (T, T), cell_size: T, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Input(format!("grid must be non-empty, got {nx}x{ny}")));
        }
        if !(cell_size > T::zero()) || !cell_size.is_finite() {
            return Err(Error::Input("cell size must be positive".into()));
        }
        if !origin.0.is_finite() || !origin.1.is_finite() {
            return Err(Error::Input("grid origin must be finite".into()));
        }
        Ok(Self {
            origin,
            cell_size,
            nx,
            ny,
        })
    }

    /// Unit-spaced square grid anchored at the origin.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new((T::zero(), T::zero()), T::one(), n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn coords(&self, idx: usize) -> (T, T) {
        let ix = idx % self.nx;
        let iy = idx / self.nx;
        (
            self.origin.0 + self.cell_size * lit::<T>(ix as f64),
            self.origin.1 + self.cell_size * lit::<T>(iy as f64),
        )
    }

    pub fn sites(&self) -> SiteSet<T> {
        SiteSet {
            sites: (0..self.len())
                .map(|i| {
                    let (x, y) = self.coords(i);
                    Site::new(x, y, i)
                })
                .collect(),
        }
    }

    /// Index of the cell nearest to the geometric centre.
    pub fn center_index(&self) -> usize {
        self.index(self.nx / 2, self.ny / 2)
    }
}

/// Gridded observations for one time index. Masked-out cells are missing.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFrame<T> {
    pub grid: GridSpec<T>,
    pub t: i64,
    pub values: Vec<T>,
    pub mask: Vec<bool>,
}

impl<T: Real> FieldFrame<T> {
    pub fn new(grid: GridSpec<T>, t: i64, values: Vec<T>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != grid.len() || mask.len() != grid.len() {
            return Err(Error::Input(format!(
                "frame for t={t} has {} values and {} mask entries, grid has {} cells",
                values.len(),
                mask.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            t,
            values,
            mask,
        })
    }

    pub fn complete(grid: GridSpec<T>, t: i64, values: Vec<T>) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::new(grid, t, values, mask)
    }

    pub fn n_observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Observed sites (ids are grid cell indices) and their values.
    pub fn observed(&self) -> (SiteSet<T>, Vec<T>) {
        let mut sites = Vec::with_capacity(self.values.len());
        let mut vals = Vec::with_capacity(self.values.len());
        for (i, (&v, &m)) in self.values.iter().zip(&self.mask).enumerate() {
            if m {
                let (x, y) = self.grid.coords(i);
                sites.push(Site::new(x, y, i));
                vals.push(v);
            }
        }
        (SiteSet { sites }, vals)
    }
}

/// Symmetric matrix of Euclidean distances.
pub fn pairwise_distances<T: Real>(sites: &SiteSet<T>) -> Result<DMatrix<T>> {
    if sites.is_empty() {
        return Err(Error::Input("pairwise distances need at least one site".into()));
    }
    let n = sites.len();
    let mut d = DMatrix::from_element(n, n, T::zero());
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sites[i].distance(&sites[j]);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

/// Longest edge of a minimum spanning tree over the complete Euclidean graph.
///
/// Dense Prim, O(n²) time and O(n) memory. All minimum spanning trees share
/// the same multiset of edge weights, so the result is well defined.
pub fn mst_max_edge<T: Real>(sites: &SiteSet<T>) -> Result<T> {
    let n = sites.len();
    if n < 2 {
        return Err(Error::Input(format!(
            "minimum spanning tree needs at least 2 sites, got {n}"
        )));
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![T::infinity(); n];
    let mut longest = T::zero();
    let mut current = 0usize;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_d = T::infinity();
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = sites[current].distance(&sites[j]);
            if d < best[j] {
                best[j] = d;
            }
            if best[j] < next_d {
                next_d = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        longest = longest.max(next_d);
        current = next;
    }
    Ok(longest)
}

/// Positions of the `k` sites nearest to `(x0, y0)`, ascending by distance,
/// ties broken by ascending site id.
pub fn knn<T: Real>(sites: &SiteSet<T>, x0: T, y0: T, k: usize) -> Result<Vec<usize>> {
    if k > sites.len() {
        return Err(Error::Input(format!(
            "requested {k} neighbours from {} sites",
            sites.len()
        )));
    }
    let mut order = sorted_by_distance(sites, x0, y0);
    order.truncate(k);
    Ok(order)
}

/// All site positions ordered by distance to `(x0, y0)` with the id tie-break.
pub fn sorted_by_distance<T: Real>(sites: &SiteSet<T>, x0: T, y0: T) -> Vec<usize> {
    let mut keyed: Vec<(T, usize, usize)> = sites
        .iter()
        .enumerate()
        .map(|(i, s)| (s.distance_to(x0, y0), s.id, i))
        .collect();
    keyed.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    keyed.into_iter().map(|(_, _, i)| i).collect()
}
