//! Radius-R connected components of particle configurations and empirical
//! cluster size distributions.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{fmt_f64, parse_f64, write_text, CsvDoc, CsvWriter};
use crate::potential::{Configuration, PairPotential};

/// Disjoint-set forest with path compression and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    /// Returns `true` if `a` and `b` were in different sets.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    pub fn set_size(&mut self, x: usize) -> usize {
        let r = self.find(x);
        self.size[r]
    }
}

/// Uniform cell grid over `[0, L]^d` with cell side at least `side`.
#[derive(Clone, Debug)]
pub struct CellList {
    dim: usize,
    per_axis: usize,
    cell_len: f64,
    heads: Vec<Vec<usize>>,
}

impl CellList {
    pub fn build(dim: usize, coords: &[f64], box_side: f64, side: f64) -> Self {
        // larger cells stay correct; cap the cell count at a few per particle
        let n = (coords.len() / dim).max(1);
        let cap = ((4 * n) as f64).powf(1.0 / dim as f64).floor().max(1.0) as usize;
        let per_axis = ((box_side / side).floor() as usize).clamp(1, cap);
        let cell_len = box_side / per_axis as f64;
        let mut cl = CellList {
            dim,
            per_axis,
            cell_len,
            heads: vec![Vec::new(); per_axis.pow(dim as u32)],
        };
        for i in 0..coords.len() / dim {
            let c = cl.cell_of(&coords[i * dim..(i + 1) * dim]);
            cl.heads[c].push(i);
        }
        cl
    }

    fn axis_index(&self, x: f64) -> usize {
        ((x / self.cell_len).floor().max(0.0) as usize).min(self.per_axis - 1)
    }

    pub fn cell_of(&self, p: &[f64]) -> usize {
        p.iter().rev().fold(0, |acc, &x| acc * self.per_axis + self.axis_index(x))
    }

    pub fn remove(&mut self, cell: usize, i: usize) {
        let v = &mut self.heads[cell];
        if let Some(pos) = v.iter().position(|&j| j == i) {
            v.swap_remove(pos);
        }
    }

    pub fn insert(&mut self, cell: usize, i: usize) {
        self.heads[cell].push(i);
    }

    /// Calls `f(j)` for every particle in the cells adjacent to `p` (including
    /// its own cell).
    pub fn for_each_neighbor(&self, p: &[f64], mut f: impl FnMut(usize)) {
        let n = self.per_axis as isize;
        let idx: Vec<isize> = p.iter().map(|&x| self.axis_index(x) as isize).collect();
        let span = |i: isize| -> std::ops::RangeInclusive<isize> {
            if n < 3 {
                0..=n - 1
            } else {
                (i - 1).max(0)..=(i + 1).min(n - 1)
            }
        };
        match self.dim {
            1 => {
                for a in span(idx[0]) {
                    self.heads[a as usize].iter().for_each(|&j| f(j));
                }
            }
            2 => {
                for b in span(idx[1]) {
                    for a in span(idx[0]) {
                        self.heads[(b * n + a) as usize].iter().for_each(|&j| f(j));
                    }
                }
            }
            _ => {
                for c in span(idx[2]) {
                    for b in span(idx[1]) {
                        for a in span(idx[0]) {
                            self.heads[((c * n + b) * n + a) as usize].iter().for_each(|&j| f(j));
                        }
                    }
                }
            }
        }
    }
}

/// Connected components of the proximity graph `|x_i - x_j| <= radius`.
pub(crate) fn components(dim: usize, coords: &[f64], box_side: Option<f64>, radius: f64) -> UnionFind {
    let n = coords.len() / dim;
    let mut uf = UnionFind::new(n);
    let r2 = radius * radius;
    let close = |i: usize, j: usize| {
        let mut s = 0.0;
        for a in 0..dim {
            let d = coords[i * dim + a] - coords[j * dim + a];
            s += d * d;
        }
        s <= r2
    };
    match box_side {
        Some(l) if n > 64 && l > 0.0 => {
            let cells = CellList::build(dim, coords, l, radius);
            for i in 0..n {
                cells.for_each_neighbor(&coords[i * dim..(i + 1) * dim], |j| {
                    if j > i && close(i, j) {
                        uf.union(i, j);
                    }
                });
            }
        }
        _ => {
            for i in 0..n {
                for j in i + 1..n {
                    if close(i, j) {
                        uf.union(i, j);
                    }
                }
            }
        }
    }
    uf
}

/// Size counts `N_k` of the radius-`radius` components.
pub(crate) fn size_counts(dim: usize, coords: &[f64], box_side: Option<f64>, radius: f64) -> BTreeMap<usize, usize> {
    let mut uf = components(dim, coords, box_side, radius);
    let mut counts = BTreeMap::new();
    for i in 0..uf.len() {
        if uf.find(i) == i {
            *counts.entry(uf.set_size(i)).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterDecomposition {
    /// Per particle: smallest particle index of its cluster.
    pub labels: Vec<usize>,
    /// Cluster sizes in order of their labels.
    pub sizes: Vec<usize>,
    /// `k -> N_k`.
    pub counts: BTreeMap<usize, usize>,
    pub radius: f64,
}

impl ClusterDecomposition {
    pub fn particle_count(&self) -> usize {
        self.labels.len()
    }

    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }
}

/// Splits a configuration into clusters at connectivity radius `radius`.
pub fn decompose(config: &Configuration, radius: f64) -> Result<ClusterDecomposition> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Domain(format!("connectivity radius must be positive, got {radius}")));
    }
    let mut uf = components(config.dim(), config.coords(), config.box_side(), radius);
    let n = config.len();
    let mut label_of_root = vec![usize::MAX; n];
    let mut labels = Vec::with_capacity(n);
    let mut sizes = Vec::new();
    let mut counts = BTreeMap::new();
    for i in 0..n {
        let r = uf.find(i);
        if label_of_root[r] == usize::MAX {
            label_of_root[r] = i;
            let s = uf.set_size(r);
            sizes.push(s);
            *counts.entry(s).or_insert(0) += 1;
        }
        labels.push(label_of_root[r]);
    }
    Ok(ClusterDecomposition {
        labels,
        sizes,
        counts,
        radius,
    })
}

/// Logs a warning when the radius does not exceed the potential's range.
pub fn check_radius(potential: &PairPotential, radius: f64) -> bool {
    let ok = radius > potential.support();
    if !ok {
        log::warn!(
            "connectivity radius {radius} does not exceed the interaction range {}",
            potential.support()
        );
    }
    ok
}

/// Sparse cluster size distribution `k -> rho_k` with its total density.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSizeDistribution {
    rho_k: BTreeMap<usize, f64>,
    rho: f64,
    pub volume: Option<f64>,
    pub radius: Option<f64>,
}

impl ClusterSizeDistribution {
    pub fn new(rho_k: BTreeMap<usize, f64>, rho: f64) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::Invalid(format!("total density must be finite and >= 0, got {rho}")));
        }
        if rho_k.contains_key(&0) {
            return Err(Error::Invalid("cluster sizes start at 1".into()));
        }
        if let Some((k, v)) = rho_k.iter().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Invalid(format!("rho_{k} = {v} must be finite and >= 0")));
        }
        let dist = ClusterSizeDistribution {
            rho_k,
            rho,
            volume: None,
            radius: None,
        };
        if dist.total_mass() > rho * (1.0 + 1e-9) + 1e-300 {
            return Err(Error::Domain(format!(
                "cluster mass {} exceeds total density {rho}",
                dist.total_mass()
            )));
        }
        Ok(dist)
    }

    pub fn from_pairs(pairs: &[(usize, f64)], rho: f64) -> Result<Self> {
        Self::new(pairs.iter().copied().collect(), rho)
    }

    pub fn zero(rho: f64) -> Self {
        ClusterSizeDistribution {
            rho_k: BTreeMap::new(),
            rho,
            volume: None,
            radius: None,
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn get(&self, k: usize) -> f64 {
        self.rho_k.get(&k).copied().unwrap_or(0.0)
    }

    pub fn entries(&self) -> &BTreeMap<usize, f64> {
        &self.rho_k
    }

    pub fn max_size(&self) -> usize {
        self.rho_k.keys().next_back().copied().unwrap_or(0)
    }

    /// `Σ_k k rho_k`.
    pub fn total_mass(&self) -> f64 {
        self.rho_k.iter().map(|(&k, &v)| k as f64 * v).sum()
    }

    /// `rho_{<=K} = Σ_{k<=K} k rho_k`.
    pub fn mass_upto(&self, cutoff: usize) -> f64 {
        self.rho_k.range(..=cutoff).map(|(&k, &v)| k as f64 * v).sum()
    }

    /// `Σ_{k>K} k rho_k`.
    pub fn mass_above(&self, cutoff: usize) -> f64 {
        self.rho_k.range(cutoff + 1..).map(|(&k, &v)| k as f64 * v).sum()
    }

    /// `m = Σ_k rho_k`.
    pub fn cluster_density(&self) -> f64 {
        self.rho_k.values().sum()
    }

    /// `m_{>K} = Σ_{k>K} rho_k`.
    pub fn clusters_above(&self, cutoff: usize) -> f64 {
        self.rho_k.range(cutoff + 1..).map(|(_, &v)| v).sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let rho_k = self.rho_k.iter().map(|(&k, &v)| (k, v * factor)).collect();
        Self::new(rho_k, self.rho)
    }

    pub fn to_csv(&self) -> String {
        let mut w = CsvWriter::new(&["k", "rho_k"]);
        w.comment(&format!(
            "rho={} volume={} R={}",
            fmt_f64(self.rho),
            self.volume.map_or("nan".into(), fmt_f64),
            self.radius.map_or("nan".into(), fmt_f64)
        ));
        for (&k, &v) in &self.rho_k {
            w.row(&[k.to_string(), fmt_f64(v)]);
        }
        w.finish()
    }

    pub fn from_csv(text: &str, origin: &str) -> Result<Self> {
        let doc = CsvDoc::parse(text, origin)?;
        doc.expect_header(&["k", "rho_k"], origin)?;
        let fields = doc.comment_fields();
        let rho = fields
            .get("rho")
            .and_then(|s| parse_f64(s))
            .ok_or_else(|| Error::parse(origin, "missing '# rho=<value>' comment"))?;
        let opt = |key: &str| fields.get(key).and_then(|s| parse_f64(s)).filter(|x| x.is_finite());
        let mut rho_k = BTreeMap::new();
        for row in 0..doc.rows.len() {
            let k = doc.uint(row, 0, origin)?;
            let v = doc.float(row, 1, origin)?;
            if rho_k.insert(k, v).is_some() {
                return Err(Error::parse(origin, format!("duplicate k = {k}")));
            }
        }
        let mut dist = Self::new(rho_k, rho)?;
        dist.volume = opt("volume");
        dist.radius = opt("R");
        Ok(dist)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_csv(&text, &path.display().to_string())
    }
}

/// `rho_k = N_k / volume`, `rho = Σ k N_k / volume`.
pub fn empirical_distribution(decomp: &ClusterDecomposition, volume: f64) -> Result<ClusterSizeDistribution> {
    if !(volume > 0.0) {
        return Err(Error::Domain(format!("volume must be positive, got {volume}")));
    }
    let rho_k = decomp
        .counts
        .iter()
        .map(|(&k, &n)| (k, n as f64 / volume))
        .collect();
    let mut dist = ClusterSizeDistribution::new(rho_k, decomp.particle_count() as f64 / volume)?;
    dist.volume = Some(volume);
    dist.radius = Some(decomp.radius);
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(xs: &[f64]) -> Configuration {
        Configuration::new(1, xs.to_vec()).unwrap()
    }

    #[test]
    fn pair_connectivity() {
        let d = decompose(&line(&[0.0, 1.05]), 1.1).unwrap();
        assert_eq!(d.counts, BTreeMap::from([(2, 1)]));
        let d = decompose(&line(&[0.0, 1.2]), 1.1).unwrap();
        assert_eq!(d.counts, BTreeMap::from([(1, 2)]));
        let d = decompose(&line(&[0.0, 1.0, 2.0, 3.0, 4.0]), 1.1).unwrap();
        assert_eq!(d.counts, BTreeMap::from([(5, 1)]));
        let d = decompose(&line(&[0.0, 1.1]), 1.1).unwrap();
        assert_eq!(d.counts, BTreeMap::from([(2, 1)]));
    }

    #[test]
    fn labels_are_smallest_member() {
        let d = decompose(&line(&[5.0, 0.0, 5.5, 0.5, 20.0]), 1.0).unwrap();
        assert_eq!(d.labels, vec![0, 1, 0, 1, 4]);
        assert_eq!(d.sizes, vec![2, 2, 1]);
    }

    #[test]
    fn empirical_examples() {
        let d = decompose(&line(&[0.0, 1.0]), 1.1).unwrap();
        let e = empirical_distribution(&d, 10.0).unwrap();
        assert!((e.get(2) - 0.1).abs() < 1e-15);
        assert!((e.rho() - 0.2).abs() < 1e-15);

        let d = decompose(&line(&[0.0, 1.0, 2.0, 7.0]), 1.1).unwrap();
        let e = empirical_distribution(&d, 8.0).unwrap();
        assert_eq!(e.get(1), 0.125);
        assert_eq!(e.get(3), 0.125);
        assert_eq!(e.rho(), 0.5);

        let d = decompose(&Configuration::empty(2), 1.0).unwrap();
        let e = empirical_distribution(&d, 5.0).unwrap();
        assert_eq!(e.rho(), 0.0);
        assert!(e.entries().is_empty());
        assert!(decompose(&line(&[0.0]), 0.0).is_err());
        assert!(empirical_distribution(&d, 0.0).is_err());
    }

    #[test]
    fn distribution_csv_round_trip() {
        let mut dist = ClusterSizeDistribution::from_pairs(&[(1, 0.03), (4, 1.0 / 300.0)], 0.05).unwrap();
        dist.volume = Some(200.0);
        dist.radius = Some(1.1);
        let text = dist.to_csv();
        assert!(text.starts_with("k,rho_k\n# rho="));
        let back = ClusterSizeDistribution::from_csv(&text, "mem").unwrap();
        assert_eq!(back, dist);
    }

    #[test]
    fn mass_excess_is_rejected() {
        assert!(ClusterSizeDistribution::from_pairs(&[(2, 0.06)], 0.1).is_err());
        assert!(ClusterSizeDistribution::from_pairs(&[(1, -0.01)], 0.1).is_err());
    }

    fn brute_force(dim: usize, coords: &[f64], r: f64) -> Vec<usize> {
        let n = coords.len() / dim;
        let mut adj = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                let d = crate::potential::distance(&coords[i * dim..(i + 1) * dim], &coords[j * dim..(j + 1) * dim]);
                adj[i][j] = i == j || d <= r;
            }
        }
        for m in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if adj[i][m] && adj[m][j] {
                        adj[i][j] = true;
                    }
                }
            }
        }
        (0..n).map(|i| (0..n).find(|&j| adj[i][j]).unwrap()).collect()
    }

    proptest! {
        #[test]
        fn matches_transitive_closure(coords in proptest::collection::vec(0.0f64..6.0, 2..24), r in 0.2f64..2.5) {
            let dim = 2;
            let mut c = coords.clone();
            if c.len() % 2 == 1 { c.pop(); }
            let cfg = Configuration::new(dim, c.clone()).unwrap();
            let d = decompose(&cfg, r).unwrap();
            prop_assert_eq!(d.labels, brute_force(dim, &c, r));
            let total: usize = d.counts.iter().map(|(k, n)| k * n).sum();
            prop_assert_eq!(total, cfg.len());
        }

        #[test]
        fn clusters_grow_with_radius(coords in proptest::collection::vec(0.0f64..10.0, 1..40), r in 0.1f64..1.5, extra in 0.0f64..1.5) {
            let cfg = Configuration::new(1, coords).unwrap();
            let small = decompose(&cfg, r).unwrap();
            let big = decompose(&cfg, r + extra).unwrap();
            for i in 0..cfg.len() {
                for j in 0..cfg.len() {
                    if small.labels[i] == small.labels[j] {
                        prop_assert_eq!(big.labels[i], big.labels[j]);
                    }
                }
            }
        }

        #[test]
        fn cell_list_agrees_with_all_pairs(coords in proptest::collection::vec(0.0f64..12.0, 200..300), r in 0.3f64..2.0) {
            let dim = 2;
            let mut c = coords.clone();
            if c.len() % 2 == 1 { c.pop(); }
            let boxed = Configuration::new(dim, c.clone()).unwrap().in_box(12.0).unwrap();
            let free = Configuration::new(dim, c).unwrap();
            prop_assert_eq!(decompose(&boxed, r).unwrap().labels, decompose(&free, r).unwrap().labels);
        }
    }
}
