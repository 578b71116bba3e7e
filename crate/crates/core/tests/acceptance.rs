//! Acceptance criteria 1–9. Runs without the libtest harness so every
//! criterion prints one PASS/FAIL line even when all of them pass.

mod support;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use gridrecon::dcfeas::{self, feasibility_check, DCModel, Feasibility, RestoreOptions, RestoreStatus, SlackPenalty};
use gridrecon::disagg;
use gridrecon::geo_recon::{self, SearchBudget, VoltageClasses};
use gridrecon::grid_model::{
    capacity_contribution_vectors, contribution_vectors, NetworkSnapshot, Quantity, RegionalSeries, ZeroWeightPolicy,
};
use gridrecon::pipeline::{self, Pipeline, RunConfig};
use gridrecon::seeds;
use gridrecon::stsample::{self, KernelConfig, PanelSampler, VolatilityPanel};
use gridrecon::synth;
use gridrecon::validate;
use nalgebra::DMatrix;
use rand::Rng;

const DRAWS: usize = 100_000;

/// The sampler fixture of criteria 1–3: four locations, six periods.
fn sampler_fixture() -> (DMatrix<f64>, DMatrix<f64>) {
    let pts: [(f64, f64); 4] = [(0.0, 0.0), (0.5, 0.0), (0.0, 1.0), (1.5, 1.5)];
    let d = DMatrix::from_fn(4, 4, |i, j| {
        let (a, b) = (pts[i], pts[j]);
        ((a.0 - b.0) * (a.0 - b.0) + (a.1 - b.1) * (a.1 - b.1)).sqrt()
    });
    let s1 = stsample::spatial_kernel(&d, 0.01, 1.0).unwrap();
    let s2 = stsample::temporal_kernel(6, 1.0);
    (s1, s2)
}

/// Rows are draws of the row-major vectorization of one 4×6 panel.
fn draw_rows(sampler: &PanelSampler, seed: u64, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut rng = seeds::rng(seed);
    let mut x = DMatrix::zeros(DRAWS, 24);
    for k in 0..DRAWS {
        let y = sampler.draw_gaussian(&mut rng);
        for i in 0..4 {
            for t in 0..6 {
                x[(k, i * 6 + t)] = f(y[(i, t)]);
            }
        }
    }
    x
}

fn criterion_1() -> String {
    let start = Instant::now();
    let (s1, s2) = sampler_fixture();
    let sampler = PanelSampler::new(&s1, &s2, 1e-6).unwrap();
    let mut rng = seeds::rng(1);
    let mut sum = DMatrix::<f64>::zeros(4, 6);
    let mut sq = DMatrix::<f64>::zeros(4, 6);
    for _ in 0..DRAWS {
        let (y, _) = sampler.draw(&mut rng);
        sum += &y;
        sq += y.component_mul(&y);
    }
    let n = DRAWS as f64;
    let mean = sum.sum() / (n * 24.0);
    let means = &sum / n;
    let stds = DMatrix::from_fn(4, 6, |i, t| ((sq[(i, t)] - n * means[(i, t)].powi(2)) / (n - 1.0)).sqrt());
    let (smin, smax) = (stds.min(), stds.max());
    let elapsed = start.elapsed();
    assert!((mean - 1.0).abs() <= 0.01, "grand mean {mean}");
    assert!(means.iter().all(|m| (m - 1.0).abs() <= 0.01), "entry means {means}");
    assert!(smin >= 0.09 && smax <= 0.11, "marginal std range [{smin}, {smax}]");
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    format!("mean {mean:.5}, marginal std in [{smin:.4}, {smax:.4}], {elapsed:.2?}")
}

fn criterion_2() -> String {
    let (s1, s2) = sampler_fixture();
    let want = support::kron(&s1, &s2);
    let built = stsample::kronecker_covariance(&s1, &s2).unwrap();
    assert!((&built - &want).amax() <= 1e-15, "crate Kronecker product differs from the definition");
    let sampler = PanelSampler::new(&s1, &s2, 1e-6).unwrap();
    let (cov, se) = support::covariance_with_se(&draw_rows(&sampler, 2, |y| y));
    let z = DMatrix::from_fn(24, 24, |a, b| (cov[(a, b)] - want[(a, b)]).abs() / se[(a, b)]);
    let worst = z.max();
    assert!(worst <= 3.0, "worst entry is {worst:.2} standard errors off");
    format!("24×24 entries within {worst:.2} SE of Σ₁⊗Σ₂")
}

fn criterion_3() -> String {
    let (s1, s2) = sampler_fixture();
    let sigma = support::kron(&s1, &s2);
    let want = DMatrix::from_fn(24, 24, |i, j| {
        (0.5 * (sigma[(i, i)] + sigma[(j, j)])).exp() * (sigma[(i, j)].exp() - 1.0)
    });
    let sampler = PanelSampler::new(&s1, &s2, 1e-6).unwrap();
    let (cov, se) = support::covariance_with_se(&draw_rows(&sampler, 3, f64::exp));
    let z = DMatrix::from_fn(24, 24, |a, b| (cov[(a, b)] - want[(a, b)]).abs() / se[(a, b)]);
    let worst = z.max();
    assert!(worst <= 3.0, "worst entry is {worst:.2} standard errors off");
    format!("24×24 entries within {worst:.2} SE of the log-normal closed form")
}

/// Independent linear interpolation of regional totals.
fn refine(values: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let t = values.ncols();
    DMatrix::from_fn(values.nrows(), k * (t - 1) + 1, |r, c| {
        let (s, j) = (c / k, c % k);
        if j == 0 {
            values[(r, s)]
        } else {
            let w = j as f64 / k as f64;
            values[(r, s)] + w * (values[(r, s + 1)] - values[(r, s)])
        }
    })
}

fn relative_gap(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

fn assert_conserved(series: &disagg::ComponentSeries, truth: &RegionalSeries, label: &str) -> f64 {
    let mut worst: f64 = 0.0;
    for (ri, r) in truth.regions.iter().enumerate() {
        let rows: Vec<usize> = (0..series.regions.len()).filter(|&k| series.regions[k] == *r).collect();
        for t in 0..truth.periods() {
            let sum: f64 = rows.iter().map(|&k| series.values[(k, t)]).sum();
            let want = truth.values[(ri, t)];
            if rows.is_empty() {
                assert_eq!(want, 0.0, "{label}: region {r} has no components but nonzero total");
                continue;
            }
            if want == 0.0 {
                assert_eq!(sum, 0.0, "{label}: region {r} period {t}");
                continue;
            }
            let gap = relative_gap(sum, want);
            assert!(gap <= 1e-9, "{label}: region {r} period {t} off by {gap:e}");
            worst = worst.max(gap);
        }
    }
    worst
}

fn criterion_4() -> String {
    let mut worst: f64 = 0.0;
    let mut fixtures = 0;

    // Desk fixture: every quantity, at source and target granularity.
    let f = synth::desk_fixture(7);
    let coords: BTreeMap<String, (f64, f64)> =
        f.registry.entries.iter().map(|e| (e.location_id.clone(), (e.lat, e.lon))).collect();
    let bus_of_gen: BTreeMap<u32, u32> = f.snapshot.generators.iter().map(|g| (g.id, g.bus)).collect();
    for (qi, hist) in f.history.iter().enumerate() {
        let cv = match hist.quantity {
            Quantity::Load => contribution_vectors(&f.snapshot, ZeroWeightPolicy::Error).unwrap(),
            q => capacity_contribution_vectors(&f.snapshot, q.as_str(), ZeroWeightPolicy::Error).unwrap(),
        };
        let pts: Vec<(f64, f64)> = cv
            .component_order()
            .iter()
            .map(|&(_, id)| {
                let bus = if hist.quantity == Quantity::Load { id } else { bus_of_gen[&id] };
                coords[&f.truth[&bus]]
            })
            .collect();
        let panel = stsample::sample_horizon(&stsample::distance_matrix(&pts), hist.periods(), 48, &KernelConfig::default(), qi as u64).unwrap();
        let coarse = disagg::disaggregate(hist, &cv, &panel).unwrap();
        worst = worst.max(assert_conserved(&coarse, hist, &format!("desk {}", hist.quantity)));
        let fine = disagg::interpolate(&coarse, 5).unwrap();
        let truth = RegionalSeries::new(hist.quantity, hist.regions.clone(), hist.start, 5, refine(&hist.values, 6)).unwrap();
        worst = worst.max(assert_conserved(&fine, &truth, &format!("desk {} at 5 min", hist.quantity)));
        fixtures += 2;
    }

    // Planted benchmark, national total into regions.
    let b = synth::planted_benchmark(4).unwrap();
    let national = b.national_total();
    for s in [0.05, 0.10] {
        let rec = b.correlated_reconstruction(s, 9).unwrap();
        for (t, want) in national.iter().enumerate() {
            let gap = relative_gap(rec.values.column(t).sum(), *want);
            assert!(gap <= 1e-9, "planted reconstruction period {t} off by {gap:e}");
            worst = worst.max(gap);
        }
        fixtures += 1;
    }

    // Random fixtures with wide magnitudes, tiny shares and volatile panels.
    let mut r = support::rng(44);
    for case in 0..300 {
        let regions: Vec<u32> = (1..=r.random_range(1..5u32)).collect();
        let mut weights = Vec::new();
        let mut id = 0;
        for &reg in &regions {
            for _ in 0..r.random_range(1..8) {
                id += 1;
                let w = if r.random_bool(0.2) { 1e-12 } else { r.random_range(0.0..1.0) * 10f64.powi(r.random_range(-3..4)) + 1e-9 };
                weights.push((id, reg, w));
            }
        }
        let cv = gridrecon::grid_model::ContributionVector::from_weights(&regions, weights, ZeroWeightPolicy::Error, true).unwrap();
        let t = r.random_range(1..20);
        let totals = DMatrix::from_fn(regions.len(), t, |_, _| {
            if r.random_bool(0.05) { 0.0 } else { r.random_range(0.0..1.0) * 10f64.powi(r.random_range(-3..7)) }
        });
        let series = RegionalSeries::new(Quantity::Load, regions.clone(), synth_start(), 30, totals).unwrap();
        let values = DMatrix::from_fn(cv.len(), t, |_, _| (r.random_range(-3.0..3.0f64)).exp());
        let panel = VolatilityPanel { values, seed: case, config: KernelConfig::default(), clipped: 0 };
        let out = disagg::disaggregate(&series, &cv, &panel).unwrap();
        worst = worst.max(assert_conserved(&out, &series, &format!("random case {case}")));
        fixtures += 1;
    }
    format!("{fixtures} fixtures, worst relative gap {worst:.2e}")
}

fn synth_start() -> chrono::DateTime<chrono::Utc> {
    chrono::DateTime::parse_from_rfc3339("2024-01-15T00:00:00Z").unwrap().into()
}

fn desk_config(dir: &Path, seed: u64) -> RunConfig {
    let path = pipeline::write_desk_bundle(&synth::desk_fixture(seed), seed, dir).unwrap();
    RunConfig::load(path).unwrap()
}

fn criterion_5() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = desk_config(tmp.path(), 7);
    let derate = cfg.derate;
    let p = Pipeline::open(cfg).unwrap();
    p.geo().unwrap();
    p.disagg().unwrap();
    let out = &p.config.out_dir;
    let s = &p.snapshot;
    assert_eq!(s.buses.len(), 100);

    let bus_region = s.bus_regions();
    let load_region: BTreeMap<u32, u32> = s.loads.iter().map(|l| (l.id, bus_region[&l.bus])).collect();
    let load = disagg::load_component_csv(out.join("disagg/load.csv"), &load_region).unwrap().remove(0);
    assert_eq!(load.periods(), 288);

    let model = DCModel::new(s, derate).unwrap();
    let net = support::DcNet::new(s, derate);
    let load_ids = model.load_ids();
    let row: BTreeMap<u32, usize> = load.component_ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();

    // Renewable availability per period from the disaggregated series.
    let mut available: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for q in ["wind", "solar"] {
        let map: BTreeMap<u32, u32> =
            s.generators.iter().filter(|g| g.fuel == q).map(|g| (g.id, bus_region[&g.bus])).collect();
        let series = disagg::load_component_csv(out.join(format!("disagg/{q}.csv")), &map).unwrap().remove(0);
        for (k, id) in series.component_ids.iter().enumerate() {
            available.insert(*id, series.values.row(k).iter().copied().collect());
        }
    }
    let bounds_at = |t: usize| {
        let mut b = model.default_bounds();
        for g in &s.generators {
            if let Some(v) = available.get(&g.id) {
                b.set(&model, g.id, 0.0, v[t].clamp(0.0, g.p_max_mw)).unwrap();
            }
        }
        b
    };

    // Ground-truth regional totals, interpolated here.
    let hist = p.history.get(Quantity::Load).unwrap();
    let truth = refine(&hist.values, 6);
    let l0: Vec<f64> = load_ids.iter().map(|id| s.loads.iter().find(|l| l.id == *id).unwrap().nominal_mw).collect();

    let (mut infeasible, mut slowest) = (0, Duration::ZERO);
    for t in 0..288 {
        let l_hat: Vec<f64> = load_ids.iter().map(|id| load.values[(row[id], t)]).collect();
        let bounds = bounds_at(t);
        let initially = feasibility_check(&model, &bounds, &l_hat).unwrap().is_feasible();
        infeasible += usize::from(!initially);
        let totals: BTreeMap<u32, f64> = hist.regions.iter().enumerate().map(|(ri, &r)| (r, truth[(ri, t)])).collect();

        let started = Instant::now();
        let res = dcfeas::restore(&model, &bounds, &l_hat, &l0, &totals, &RestoreOptions::default()).unwrap();
        slowest = slowest.max(started.elapsed());

        let witness = match feasibility_check(&model, &bounds, &res.loads).unwrap() {
            Feasibility::Feasible(w) => w,
            Feasibility::Infeasible(c) => panic!("period {t} still infeasible after restoration: {c}"),
        };
        let v = net.violation(&witness.dispatch, &bounds.p_min, &bounds.p_max, &res.loads);
        assert!(v <= 1e-6, "period {t}: independent power flow finds {v:e} MW violation");
        for (r, want) in &totals {
            let got: f64 = res.loads.iter().zip(model.load_regions()).filter(|(_, lr)| lr == r).map(|(l, _)| l).sum();
            assert!(relative_gap(got, *want) <= 1e-6, "period {t} region {r}: {got} vs {want}");
        }
        if initially {
            assert_eq!(res.status, RestoreStatus::Unchanged, "period {t}");
            assert_eq!(res.objective, 0.0);
            assert_eq!(res.loads, l_hat);
        } else {
            assert_eq!(res.status, RestoreStatus::Restored, "period {t}");
        }
    }
    let share = infeasible as f64 / 288.0;
    assert!(share >= 0.10, "only {infeasible} of 288 periods start infeasible");
    assert!(slowest < Duration::from_secs(2), "slowest period took {slowest:?}");
    format!("{infeasible}/288 periods initially infeasible, all restored and verified, slowest solve {slowest:.2?}")
}

/// Tiny restoration fixtures: (name, snapshot, derate, l̂, L⁰, totals, penalty).
type Tiny = (&'static str, &'static str, f64, Vec<f64>, Vec<f64>, BTreeMap<u32, f64>, SlackPenalty);

const TWO_BUS: &str = r#"{
    "regions": [{"id": 1}],
    "buses": [{"id": 1, "region_id": 1, "voltage_kV": 225}, {"id": 2, "region_id": 1, "voltage_kV": 225}],
    "branches": [{"id": 1, "from_bus": 1, "to_bus": 2, "resistance_pu": 0.01, "reactance_pu": 0.1, "thermal_limit_MW": 100}],
    "generators": [{"id": 1, "bus": 1, "fuel": "gas", "p_min_MW": 0, "p_max_MW": 500}],
    "loads": [{"id": 1, "bus": 1, "nominal_MW": 50}, {"id": 2, "bus": 2, "nominal_MW": 80}]
}"#;

const RADIAL: &str = r#"{
    "regions": [{"id": 1}],
    "buses": [{"id": 1, "region_id": 1, "voltage_kV": 400}, {"id": 2, "region_id": 1, "voltage_kV": 400},
              {"id": 3, "region_id": 1, "voltage_kV": 400}],
    "branches": [{"id": 1, "from_bus": 1, "to_bus": 2, "resistance_pu": 0.01, "reactance_pu": 0.1, "thermal_limit_MW": 1000},
                 {"id": 2, "from_bus": 2, "to_bus": 3, "resistance_pu": 0.01, "reactance_pu": 0.1, "thermal_limit_MW": 100}],
    "generators": [{"id": 1, "bus": 1, "fuel": "gas", "p_min_MW": 0, "p_max_MW": 500}],
    "loads": [{"id": 1, "bus": 2, "nominal_MW": 50}, {"id": 2, "bus": 3, "nominal_MW": 80}]
}"#;

/// Loads A (bus 3), B (bus 1) and C (bus 2); only line 1–3 is binding.
const TRIANGLE: &str = r#"{
    "regions": [{"id": 1}],
    "buses": [{"id": 1, "region_id": 1, "voltage_kV": 225}, {"id": 2, "region_id": 1, "voltage_kV": 225},
              {"id": 3, "region_id": 1, "voltage_kV": 225}],
    "branches": [{"id": 1, "from_bus": 1, "to_bus": 2, "resistance_pu": 0.01, "reactance_pu": 0.1, "thermal_limit_MW": 10000},
                 {"id": 2, "from_bus": 2, "to_bus": 3, "resistance_pu": 0.01, "reactance_pu": 0.1, "thermal_limit_MW": 10000},
                 {"id": 3, "from_bus": 1, "to_bus": 3, "resistance_pu": 0.01, "reactance_pu": 0.1, "thermal_limit_MW": 100}],
    "generators": [{"id": 1, "bus": 1, "fuel": "gas", "p_min_MW": 0, "p_max_MW": 1000}],
    "loads": [{"id": 1, "bus": 3, "nominal_MW": 100}, {"id": 2, "bus": 1, "nominal_MW": 50}, {"id": 3, "bus": 2, "nominal_MW": 200}]
}"#;

/// Ring 1–2–3–4–1 with unequal reactances, two generators, two regions.
const RING: &str = r#"{
    "regions": [{"id": 1}, {"id": 2}],
    "buses": [{"id": 1, "region_id": 1, "voltage_kV": 225}, {"id": 2, "region_id": 1, "voltage_kV": 225},
              {"id": 3, "region_id": 2, "voltage_kV": 225}, {"id": 4, "region_id": 2, "voltage_kV": 225}],
    "branches": [{"id": 1, "from_bus": 1, "to_bus": 2, "resistance_pu": 0.01, "reactance_pu": 0.10, "thermal_limit_MW": 120},
                 {"id": 2, "from_bus": 2, "to_bus": 3, "resistance_pu": 0.01, "reactance_pu": 0.20, "thermal_limit_MW": 150},
                 {"id": 3, "from_bus": 3, "to_bus": 4, "resistance_pu": 0.01, "reactance_pu": 0.15, "thermal_limit_MW": 90},
                 {"id": 4, "from_bus": 4, "to_bus": 1, "resistance_pu": 0.01, "reactance_pu": 0.25, "thermal_limit_MW": 200}],
    "generators": [{"id": 1, "bus": 1, "fuel": "gas", "p_min_MW": 0, "p_max_MW": 300},
                   {"id": 2, "bus": 3, "fuel": "coal", "p_min_MW": 20, "p_max_MW": 250}],
    "loads": [{"id": 1, "bus": 2, "nominal_MW": 90}, {"id": 2, "bus": 1, "nominal_MW": 40},
              {"id": 3, "bus": 4, "nominal_MW": 120}, {"id": 4, "bus": 3, "nominal_MW": 60}]
}"#;

fn tiny_fixtures() -> Vec<Tiny> {
    let one = |t: f64| BTreeMap::from([(1, t)]);
    let two = |a: f64, b: f64| BTreeMap::from([(1, a), (2, b)]);
    let q = SlackPenalty::Quadratic;
    vec![
        ("two-bus stranded", TWO_BUS, 1.0, vec![0.0, 150.0], vec![50.0, 80.0], one(150.0), q),
        ("two-bus derated", TWO_BUS, 0.95, vec![0.0, 150.0], vec![50.0, 80.0], one(150.0), q),
        ("two-bus feasible", TWO_BUS, 1.0, vec![40.0, 60.0], vec![50.0, 80.0], one(100.0), q),
        ("radial stranded", RADIAL, 1.0, vec![0.0, 150.0], vec![50.0, 80.0], one(150.0), q),
        ("radial total shift", RADIAL, 0.9, vec![10.0, 120.0], vec![50.0, 80.0], one(160.0), q),
        ("triangle", TRIANGLE, 1.0, vec![180.0, 50.0, 0.0], vec![100.0, 50.0, 200.0], one(230.0), q),
        ("triangle linear", TRIANGLE, 1.0, vec![180.0, 50.0, 0.0], vec![100.0, 50.0, 200.0], one(230.0), SlackPenalty::Linear { weight: 3.0 }),
        ("triangle derated", TRIANGLE, 0.95, vec![170.0, 60.0, 10.0], vec![100.0, 50.0, 200.0], one(240.0), q),
        ("ring congested", RING, 1.0, vec![200.0, 10.0, 180.0, 20.0], vec![90.0, 40.0, 120.0, 60.0], two(210.0, 200.0), q),
        ("ring derated", RING, 0.5, vec![170.0, 10.0, 150.0, 20.0], vec![90.0, 40.0, 120.0, 60.0], two(180.0, 170.0), q),
        ("ring feasible", RING, 1.0, vec![60.0, 30.0, 80.0, 50.0], vec![90.0, 40.0, 120.0, 60.0], two(90.0, 130.0), q),
    ]
}

fn criterion_6() -> String {
    let mut lines = Vec::new();
    let mut worst_restore: f64 = 0.0;
    for (name, json, derate, l_hat, l0, totals, penalty) in tiny_fixtures() {
        let s = NetworkSnapshot::from_json(json).unwrap();
        let model = DCModel::new(&s, derate).unwrap();
        let opts = RestoreOptions { slack: penalty, ..RestoreOptions::default() };
        let got = dcfeas::restore(&model, &model.default_bounds(), &l_hat, &l0, &totals, &opts).unwrap();
        let want = support::reference_restore(&support::DcNet::new(&s, derate), &l_hat, &l0, &totals, penalty)
            .unwrap_or_else(|| panic!("{name}: reference finds no feasible load"));
        let tol = 1e-6 * want.abs().max(1.0);
        let gap = (got.objective - want).abs();
        assert!(gap <= tol, "{name}: restore {} vs reference {want}", got.objective);
        let recomputed = support::restore_objective(&l_hat, &l0, &got.loads, penalty);
        assert!((recomputed - got.objective).abs() <= tol, "{name}: reported {} but loads cost {recomputed}", got.objective);
        assert!(feasibility_check(&model, &model.default_bounds(), &got.loads).unwrap().is_feasible(), "{name}");
        worst_restore = worst_restore.max(gap / want.abs().max(1.0));
        lines.push(format!("{name}={want:.4}"));
    }

    // Geolocation: local search against exhaustive enumeration.
    let (mut planted, mut noisy) = (0, 0);
    for seed in 0..40u64 {
        let n = 3 + (seed as usize % 6);
        let is_planted = seed % 2 == 0;
        let f = support::geo_fixture(seed, n, 2, is_planted);
        let p = geo_recon::build_problem(&f.snapshot, &f.registry, &VoltageClasses::default(), f.km_per_ohm);
        let Some(best) = support::geo_brute_force(&f) else {
            assert!(p.is_err() || geo_recon::local_search(&p.unwrap(), seed, SearchBudget::default()).is_err());
            continue;
        };
        let p = p.unwrap();
        let (a, _) = geo_recon::local_search(&p, seed, SearchBudget::default()).unwrap();
        let place: BTreeMap<u32, String> =
            a.location_of.iter().enumerate().map(|(i, &j)| (p.substation_ids[i], p.location_ids[j].clone())).collect();
        let ours = support::geo_objective(&f, &place);
        assert!((ours - a.objective).abs() <= 1e-6 * ours.max(1.0), "seed {seed}: objective {} vs recomputed {ours}", a.objective);
        assert!(ours <= best + 1e-6 * best.max(1.0), "seed {seed} (n={n}): local search {ours} vs optimum {best}");
        let exact = geo_recon::brute_force(&p).unwrap();
        assert!((exact.objective - best).abs() <= 1e-6 * best.max(1.0), "seed {seed}: crate brute force {} vs {best}", exact.objective);
        if is_planted {
            assert!(best <= 1e-9 && a.objective <= 1e-9, "seed {seed}: planted instance not solved to zero ({})", a.objective);
            planted += 1;
        } else {
            noisy += 1;
        }
    }
    format!(
        "{} restore fixtures within {worst_restore:.1e} relative [{}]; geo optimal on {planted} planted + {noisy} noisy instances",
        lines.len(),
        lines.join(", ")
    )
}

const SEEDS: std::ops::Range<u64> = 0..10;

fn criterion_7() -> String {
    let mut margins = Vec::new();
    for seed in SEEDS {
        let b = synth::planted_benchmark(seed).unwrap();
        for (i, s) in [0.05, 0.10].into_iter().enumerate() {
            let k = seeds::derive_seed(seed, "acceptance", i as u64);
            let corr = b.correlated_reconstruction(s, k).unwrap();
            let unif = b.uniform_reconstruction(s, k ^ 1).unwrap();
            let oc = validate::compare_regional(&b.history, &corr, 5).unwrap().overlap;
            let ou = validate::compare_regional(&b.history, &unif, 5).unwrap().overlap;
            assert!(oc > ou, "seed {seed}, noise {s}: correlated {oc:.4} <= uniform {ou:.4}");
            margins.push(oc - ou);
        }
    }
    let min = margins.iter().copied().fold(f64::INFINITY, f64::min);
    format!("{} comparisons over {} seeds, zero violations, smallest margin {min:.3}", margins.len(), SEEDS.end)
}

fn criterion_8() -> String {
    let mut gaps = Vec::new();
    for seed in SEEDS {
        let b = synth::planted_benchmark(seed).unwrap();
        let v = &b.history.values;
        // Mean over daily windows of the cluster-averaged correlations.
        let (mut intra, mut inter, mut windows) = (0.0, 0.0, 0.0);
        for w in 0..v.ncols() / 48 {
            let (mut si, mut ni, mut so, mut no) = (0.0, 0.0, 0.0, 0.0);
            for a in 0..12 {
                for c in 0..a {
                    let x: Vec<f64> = (w * 48..(w + 1) * 48).map(|t| v[(a, t)]).collect();
                    let y: Vec<f64> = (w * 48..(w + 1) * 48).map(|t| v[(c, t)]).collect();
                    let r = support::pearson(&x, &y);
                    if b.clusters[a] == b.clusters[c] {
                        (si, ni) = (si + r, ni + 1.0);
                    } else {
                        (so, no) = (so + r, no + 1.0);
                    }
                }
            }
            intra += si / ni;
            inter += so / no;
            windows += 1.0;
        }
        let gap = (intra - inter) / windows;
        let m = validate::mean_pearson(&b.history, 48).unwrap();
        let (ci, co) = validate::group_correlation(&m, &b.clusters);
        assert!(((ci - co) - gap).abs() < 1e-9, "seed {seed}: crate gap {} vs {gap}", ci - co);
        assert!(gap >= 0.2, "seed {seed}: intra − inter = {gap:.3}");
        gaps.push(gap);
    }
    let min = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    format!("intra − inter correlation ≥ {min:.3} on all {} seeds", gaps.len())
}

fn files_except_manifest(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_9() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let base = desk_config(&tmp.path().join("fixture"), 7);
    assert_eq!(base.parallelism, 1);
    let mut runs = Vec::new();
    let mut times = Vec::new();
    for k in 0..2 {
        let mut cfg = base.clone();
        cfg.out_dir = tmp.path().join(format!("run{k}"));
        let started = Instant::now();
        let m = pipeline::run_pipeline(cfg.clone()).unwrap();
        let elapsed = started.elapsed();
        assert!(elapsed < Duration::from_secs(60), "run {k} took {elapsed:?}");
        assert_eq!(m.status, "complete");
        let restore = m.stages.iter().find(|s| s.name == "restore").unwrap();
        assert_eq!(restore.summary["periods"], 288);
        times.push(elapsed);
        runs.push((m, files_except_manifest(&cfg.out_dir)));
    }
    let ((m0, f0), (m1, f1)) = (&runs[0], &runs[1]);
    assert_eq!(f0.keys().collect::<Vec<_>>(), f1.keys().collect::<Vec<_>>());
    for (path, bytes) in f0 {
        assert!(f1[path] == *bytes, "{path} differs between runs");
    }
    let digests = |m: &pipeline::Manifest| m.stages.iter().map(|s| s.outputs.clone()).collect::<Vec<_>>();
    assert_eq!(digests(m0), digests(m1));
    format!("{} output files byte-identical across runs, {:.2?} and {:.2?} single-threaded", f0.len(), times[0], times[1])
}

fn main() {
    let criteria: [(&str, fn() -> String); 9] = [
        ("sampler moments", criterion_1),
        ("Kronecker covariance", criterion_2),
        ("log-normal covariance", criterion_3),
        ("exact conservation", criterion_4),
        ("restoration soundness", criterion_5),
        ("tiny-instance optimality", criterion_6),
        ("overlap ordering", criterion_7),
        ("Pearson cluster structure", criterion_8),
        ("desk pipeline", criterion_9),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        match catch_unwind(AssertUnwindSafe(run)) {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail} [{:.1?}]", i + 1, started.elapsed()),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL criterion {} ({name}): {msg} [{:.1?}]", i + 1, started.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
