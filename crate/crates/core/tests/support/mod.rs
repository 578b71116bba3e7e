//! Oracles shared by the integration tests. Nothing here calls into the
//! crate's numerical code; every quantity is recomputed from first
//! principles so a test compares two independent routes.
#![allow(dead_code)]

use std::collections::BTreeMap;

use gridrecon::dcfeas::SlackPenalty;
use gridrecon::grid_model::{GeoEntry, GeoRegistry, NetworkSnapshot};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Kronecker product by its definition: block (i, j) is `a[i,j] * b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = b.shape();
    let mut out = DMatrix::zeros(a.nrows() * p, a.ncols() * q);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            for r in 0..p {
                for c in 0..q {
                    out[(i * p + r, j * q + c)] = a[(i, j)] * b[(r, c)];
                }
            }
        }
    }
    out
}

/// Sample covariance (n − 1) of the rows of `x` and the plug-in standard
/// error of each entry.
pub fn covariance_with_se(x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, d) = x.shape();
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let mut cov = DMatrix::zeros(d, d);
    let mut se = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..=a {
            let prods: Vec<f64> = (0..n).map(|i| centered[(i, a)] * centered[(i, b)]).collect();
            let m = prods.iter().sum::<f64>() / n as f64;
            let var = prods.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let c = prods.iter().sum::<f64>() / (n - 1) as f64;
            cov[(a, b)] = c;
            cov[(b, a)] = c;
            se[(a, b)] = (var / n as f64).sqrt();
            se[(b, a)] = se[(a, b)];
        }
    }
    (cov, se)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Great-circle distance through the chord between unit vectors.
pub fn chord_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let v = |(lat, lon): (f64, f64)| {
        let (la, lo) = (lat.to_radians(), lon.to_radians());
        [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
    };
    let (p, q) = (v(a), v(b));
    let c = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    2.0 * 6371.0088 * (c / 2.0).min(1.0).asin()
}

/// Single-island DC network with PTDFs from the inverse of the reduced
/// susceptance matrix (reference: lowest bus id).
pub struct DcNet {
    pub bus_index: BTreeMap<u32, usize>,
    /// (from, to, limit after derate)
    pub lines: Vec<(usize, usize, f64)>,
    pub ptdf: DMatrix<f64>,
    /// (bus, p_min, p_max) in snapshot order.
    pub gens: Vec<(usize, f64, f64)>,
    /// (bus, region) in snapshot order.
    pub loads: Vec<(usize, u32)>,
}

impl DcNet {
    pub fn new(s: &NetworkSnapshot, derate: f64) -> Self {
        let mut ids: Vec<u32> = s.buses.iter().map(|b| b.id).collect();
        ids.sort();
        let bus_index: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let n = ids.len();
        let mut b = DMatrix::zeros(n, n);
        let mut lines = Vec::new();
        let mut sus = Vec::new();
        for br in &s.branches {
            let (f, t) = (bus_index[&br.from_bus], bus_index[&br.to_bus]);
            let y = 1.0 / br.reactance_pu;
            b[(f, f)] += y;
            b[(t, t)] += y;
            b[(f, t)] -= y;
            b[(t, f)] -= y;
            lines.push((f, t, br.thermal_limit_mw * derate));
            sus.push(y);
        }
        let reduced = b.view((1, 1), (n - 1, n - 1)).into_owned();
        let inv = reduced.try_inverse().expect("connected network");
        let mut ptdf = DMatrix::zeros(lines.len(), n);
        for (k, &(f, t, _)) in lines.iter().enumerate() {
            for bus in 1..n {
                let theta_f = if f == 0 { 0.0 } else { inv[(f - 1, bus - 1)] };
                let theta_t = if t == 0 { 0.0 } else { inv[(t - 1, bus - 1)] };
                ptdf[(k, bus)] = sus[k] * (theta_f - theta_t);
            }
        }
        let bus_region = s.bus_regions();
        DcNet {
            bus_index: bus_index.clone(),
            lines,
            ptdf,
            gens: s.generators.iter().map(|g| (bus_index[&g.bus], g.p_min_mw, g.p_max_mw)).collect(),
            loads: s.loads.iter().map(|l| (bus_index[&l.bus], bus_region[&l.bus])).collect(),
        }
    }

    pub fn injections(&self, dispatch: &[f64], loads: &[f64]) -> DVector<f64> {
        let mut inj = DVector::zeros(self.bus_index.len());
        for (g, &(bus, _, _)) in dispatch.iter().zip(&self.gens) {
            inj[bus] += g;
        }
        for (l, &(bus, _)) in loads.iter().zip(&self.loads) {
            inj[bus] -= l;
        }
        inj
    }

    /// Total violation (MW) of balance, generator bounds and line limits.
    pub fn violation(&self, dispatch: &[f64], p_min: &[f64], p_max: &[f64], loads: &[f64]) -> f64 {
        let inj = self.injections(dispatch, loads);
        let mut v = inj.sum().abs();
        for ((g, lo), hi) in dispatch.iter().zip(p_min).zip(p_max) {
            v += (lo - g).max(0.0) + (g - hi).max(0.0);
        }
        let flows = &self.ptdf * inj;
        for (f, &(_, _, limit)) in flows.iter().zip(&self.lines) {
            v += (f.abs() - limit).max(0.0);
        }
        v
    }
}

/// `a · z ≤ b`
#[derive(Clone)]
struct Halfspace {
    a: Vec<f64>,
    b: f64,
}

/// Vertices of `{z : a·z ≤ b}` in `d ≤ 3` dimensions by intersecting every
/// `d` boundaries.
fn vertices(hs: &[Halfspace], d: usize) -> Vec<Vec<f64>> {
    if d == 0 {
        return if hs.iter().all(|h| h.b >= -1e-7 * (1.0 + h.b.abs())) { vec![vec![]] } else { vec![] };
    }
    let scale = hs.iter().map(|h| h.b.abs()).fold(1.0, f64::max);
    let mut out = Vec::new();
    let mut idx = vec![0usize; d];
    fn combos(n: usize, d: usize, start: usize, idx: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
        if k == d {
            f(idx);
            return;
        }
        for i in start..n {
            idx[k] = i;
            combos(n, d, i + 1, idx, k + 1, f);
        }
    }
    combos(hs.len(), d, 0, &mut idx, 0, &mut |sel: &[usize]| {
        let m = DMatrix::from_fn(d, d, |r, c| hs[sel[r]].a[c]);
        let rhs = DVector::from_fn(d, |r, _| hs[sel[r]].b);
        if m.determinant().abs() < 1e-12 {
            return;
        }
        if let Some(z) = m.lu().solve(&rhs) {
            let ok = hs.iter().all(|h| h.a.iter().zip(z.iter()).map(|(a, x)| a * x).sum::<f64>() <= h.b + 1e-9 * scale);
            if ok {
                out.push(z.iter().copied().collect());
            }
        }
    });
    out
}

/// Fixes the leading coordinates of every halfspace.
fn substitute(hs: &[Halfspace], fixed: &[f64]) -> Vec<Halfspace> {
    hs.iter()
        .map(|h| Halfspace {
            a: h.a[fixed.len()..].to_vec(),
            b: h.b - h.a.iter().zip(fixed).map(|(a, x)| a * x).sum::<f64>(),
        })
        .collect()
}

/// Range of the first free coordinate after fixing `fixed`.
fn section(hs: &[Halfspace], d: usize, fixed: &[f64]) -> Option<(f64, f64)> {
    let sub = substitute(hs, fixed);
    let v = vertices(&sub, d - fixed.len());
    if v.is_empty() {
        return None;
    }
    let lo = v.iter().map(|z| z[0]).fold(f64::INFINITY, f64::min);
    let hi = v.iter().map(|z| z[0]).fold(f64::NEG_INFINITY, f64::max);
    Some((lo, hi))
}

fn golden(lo: f64, hi: f64, f: &mut dyn FnMut(f64) -> f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi.max(lo));
    let (mut c, mut d) = (b - r * (b - a), a + r * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..120 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    [f(lo), f(hi.max(lo)), fc, fd].into_iter().fold(f64::INFINITY, f64::min)
}

/// L1 change plus the slack penalty at the smallest box excursion.
pub fn restore_objective(l_hat: &[f64], l0: &[f64], l: &[f64], penalty: SlackPenalty) -> f64 {
    let mut change = 0.0;
    let mut slack = Vec::new();
    for i in 0..l.len() {
        change += (l[i] - l_hat[i]).abs();
        let (lo, hi) = (l_hat[i].min(l0[i]), l_hat[i].max(l0[i]));
        slack.push((lo - l[i]).max(l[i] - hi).max(0.0));
    }
    change
        + match penalty {
            SlackPenalty::Quadratic => slack.iter().map(|s| s * s).sum::<f64>(),
            SlackPenalty::Linear { weight } => weight * slack.iter().sum::<f64>(),
        }
}

/// Optimal restoration objective on a tiny single-island instance (at most
/// two generators and two free load dimensions after the regional totals).
/// The feasible set is a polytope in (free loads, first dispatch); its
/// sections come from vertex enumeration and the convex objective is
/// minimized by nested golden-section search.
pub fn reference_restore(
    net: &DcNet,
    l_hat: &[f64],
    l0: &[f64],
    totals: &BTreeMap<u32, f64>,
    penalty: SlackPenalty,
) -> Option<f64> {
    assert!(net.gens.len() <= 2 && !net.gens.is_empty());
    let n = net.loads.len();
    // Free loads: all but the last load of each region.
    let mut by_region: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &(_, r)) in net.loads.iter().enumerate() {
        by_region.entry(r).or_default().push(i);
    }
    let free: Vec<usize> = by_region.values().flat_map(|v| v[..v.len() - 1].iter().copied()).collect();
    let p = free.len();
    assert!(p <= 2, "reference handles at most two free load dimensions");
    let q = net.gens.len() - 1;
    let d = p + q;

    // Loads and dispatch as affine maps of z.
    let loads_at = |z: &[f64]| -> Vec<f64> {
        let mut l = vec![0.0; n];
        for (k, &i) in free.iter().enumerate() {
            l[i] = z[k];
        }
        for (r, members) in &by_region {
            let last = *members.last().unwrap();
            l[last] = totals[r] - members[..members.len() - 1].iter().map(|&i| l[i]).sum::<f64>();
        }
        l
    };
    let dispatch_at = |z: &[f64]| -> Vec<f64> {
        let total: f64 = loads_at(z).iter().sum();
        if q == 0 {
            vec![total]
        } else {
            vec![z[p], total - z[p]]
        }
    };
    // Every constraint value c(z) ≤ 0, as an affine function.
    let constraints = |z: &[f64]| -> Vec<f64> {
        let l = loads_at(z);
        let g = dispatch_at(z);
        let mut c: Vec<f64> = l.iter().map(|x| -x).collect();
        for (gi, &(_, lo, hi)) in g.iter().zip(&net.gens) {
            c.push(lo - gi);
            c.push(gi - hi);
        }
        let flows = &net.ptdf * net.injections(&g, &l);
        for (f, &(_, _, limit)) in flows.iter().zip(&net.lines) {
            c.push(f - limit);
            c.push(-f - limit);
        }
        c
    };
    let origin = vec![0.0; d];
    let c0 = constraints(&origin);
    let mut hs: Vec<Halfspace> = c0.iter().map(|&v| Halfspace { a: vec![0.0; d], b: -v }).collect();
    for k in 0..d {
        let mut e = origin.clone();
        e[k] = 1.0;
        for (h, (ck, c)) in hs.iter_mut().zip(constraints(&e).iter().zip(&c0)) {
            h.a[k] = ck - c;
        }
    }

    let cost = |z: &[f64]| restore_objective(l_hat, l0, &loads_at(z), penalty);
    let full = |fixed: &[f64]| -> Vec<f64> {
        let mut z = fixed.to_vec();
        z.resize(d, 0.0);
        z
    };
    match p {
        0 => vertices(&hs, d).first().map(|_| cost(&full(&[]))),
        1 => {
            let (lo, hi) = section(&hs, d, &[])?;
            Some(golden(lo, hi, &mut |u| cost(&full(&[u]))))
        }
        _ => {
            let (lo, hi) = section(&hs, d, &[])?;
            Some(golden(lo, hi, &mut |u| match section(&hs, d, &[u]) {
                Some((vlo, vhi)) => golden(vlo, vhi, &mut |v| cost(&full(&[u, v]))),
                None => f64::INFINITY,
            }))
        }
    }
}

/// A small geolocation instance: `n` buses over two regions and two voltage
/// levels, true locations plus `decoys` extra registry entries. With
/// `planted` the resistances are exactly proportional to true distances;
/// otherwise they carry up to ±30 % noise.
pub struct GeoFixture {
    pub snapshot: NetworkSnapshot,
    pub registry: GeoRegistry,
    pub km_per_ohm: f64,
    pub truth: BTreeMap<u32, String>,
}

pub fn geo_fixture(seed: u64, n: usize, decoys: usize, planted: bool) -> GeoFixture {
    let mut r = rng(seed);
    let km_per_ohm = 1500.0;
    let kv = [225.0, 400.0];
    let mut buses = Vec::new();
    let mut entries = Vec::new();
    let mut truth = BTreeMap::new();
    let mut loc = BTreeMap::new();
    for id in 1..=n as u32 {
        let region = 1 + (id % 2);
        let v = kv[r.random_range(0..2)];
        let pos = (45.0 + r.random_range(-0.8..0.8), 3.0 + r.random_range(-0.8..0.8));
        buses.push(serde_json::json!({"id": id, "region_id": region, "voltage_kV": v}));
        entries.push((Some(id), GeoEntry { location_id: String::new(), lat: pos.0, lon: pos.1, region_id: region, voltage_kv: v }));
        loc.insert(id, pos);
    }
    for _ in 0..decoys {
        let pos = (45.0 + r.random_range(-0.8..0.8), 3.0 + r.random_range(-0.8..0.8));
        entries.push((None, GeoEntry { location_id: String::new(), lat: pos.0, lon: pos.1, region_id: 1 + r.random_range(0..2), voltage_kv: kv[r.random_range(0..2)] }));
    }
    entries.shuffle(&mut r);
    let entries: Vec<GeoEntry> = entries
        .into_iter()
        .enumerate()
        .map(|(k, (bus, mut e))| {
            e.location_id = format!("L{k}");
            if let Some(b) = bus {
                truth.insert(b, e.location_id.clone());
            }
            e
        })
        .collect();

    // Random tree plus one chord.
    let mut pairs: Vec<(u32, u32)> = (2..=n as u32).map(|b| (r.random_range(1..b), b)).collect();
    if n >= 4 {
        let (a, b) = (1, n as u32);
        if !pairs.contains(&(a, b)) {
            pairs.push((a, b));
        }
    }
    let branches: Vec<_> = pairs
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let noise = if planted { 1.0 } else { 1.0 + r.random_range(-0.3..0.3) };
            let res = chord_km(loc[&a], loc[&b]) * noise / km_per_ohm;
            serde_json::json!({"id": k + 1, "from_bus": a, "to_bus": b, "resistance_pu": res, "reactance_pu": 10.0 * res, "thermal_limit_MW": 100.0})
        })
        .collect();
    let snapshot = serde_json::json!({
        "regions": [{"id": 1}, {"id": 2}],
        "buses": buses,
        "branches": branches,
        "generators": [],
        "loads": [],
    });
    GeoFixture {
        snapshot: NetworkSnapshot::from_json(&snapshot.to_string()).unwrap(),
        registry: GeoRegistry::new(entries).unwrap(),
        km_per_ohm,
        truth,
    }
}

/// Objective of a bus → location map, computed from the raw inputs.
pub fn geo_objective(f: &GeoFixture, place: &BTreeMap<u32, String>) -> f64 {
    let pos = |b: u32| {
        let e = f.registry.entries.iter().find(|e| e.location_id == place[&b]).unwrap();
        (e.lat, e.lon)
    };
    f.snapshot
        .branches
        .iter()
        .map(|br| (chord_km(pos(br.from_bus), pos(br.to_bus)) - br.resistance_pu * f.km_per_ohm).powi(2))
        .sum()
}

/// Exhaustive optimum over injective maps to same-region, same-voltage
/// entries, with branch-and-bound on the partial objective.
pub fn geo_brute_force(f: &GeoFixture) -> Option<f64> {
    let buses: Vec<(u32, u32, f64)> = f.snapshot.buses.iter().map(|b| (b.id, b.region_id, b.voltage_kv)).collect();
    let cands: Vec<Vec<usize>> = buses
        .iter()
        .map(|&(_, r, v)| {
            f.registry
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| e.region_id == r && e.voltage_kv == v)
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    let pos: Vec<(f64, f64)> = f.registry.entries.iter().map(|e| (e.lat, e.lon)).collect();
    let index: BTreeMap<u32, usize> = buses.iter().enumerate().map(|(i, b)| (b.0, i)).collect();
    let edges: Vec<(usize, usize, f64)> = f
        .snapshot
        .branches
        .iter()
        .map(|br| {
            let (a, b) = (index[&br.from_bus], index[&br.to_bus]);
            (a.max(b), a.min(b), br.resistance_pu * f.km_per_ohm)
        })
        .collect();

    struct Search<'a> {
        cands: &'a [Vec<usize>],
        pos: &'a [(f64, f64)],
        edges: &'a [(usize, usize, f64)],
        chosen: Vec<usize>,
        used: Vec<bool>,
        best: f64,
    }
    fn go(s: &mut Search, i: usize, partial: f64) {
        if partial >= s.best {
            return;
        }
        if i == s.cands.len() {
            s.best = partial;
            return;
        }
        for k in 0..s.cands[i].len() {
            let c = s.cands[i][k];
            if s.used[c] {
                continue;
            }
            s.chosen.push(c);
            s.used[c] = true;
            let add: f64 = s
                .edges
                .iter()
                .filter(|e| e.0 == i)
                .map(|e| (chord_km(s.pos[c], s.pos[s.chosen[e.1]]) - e.2).powi(2))
                .sum();
            go(s, i + 1, partial + add);
            s.used[c] = false;
            s.chosen.pop();
        }
    }
    let mut s = Search {
        cands: &cands,
        pos: &pos,
        edges: &edges,
        chosen: Vec::new(),
        used: vec![false; pos.len()],
        best: f64::INFINITY,
    };
    go(&mut s, 0, 0.0);
    s.best.is_finite().then_some(s.best)
}
