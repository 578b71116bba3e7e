//! End-to-end orchestration: geo → bids → sample → disagg → restore →
//! validate, driven by one TOML configuration.
//!
//! Every stage reads the configured inputs plus the artifacts of earlier
//! stages from the output directory, so running the stages one by one gives
//! the same files as [`run_pipeline`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bid_map::{self, MatchPolicy};
use crate::dcfeas::{self, DCModel, RestoreOptions, RestoreStatus};
use crate::disagg::{self, ComponentSeries};
use crate::error::{Error, Result};
use crate::geo_recon::{self, SearchBudget, VoltageClasses};
use crate::grid_model::{
    capacity_contribution_vectors, contribution_vectors, load_geo_registry, load_offers, load_regional_history,
    load_snapshot, BusId, ContributionVector, GeoRegistry, NetworkSnapshot, OfferRecord, Quantity, RegionId,
    RegionalHistory, RegionalSeries, ZeroWeightPolicy,
};
use crate::seeds::derive_seed;
use crate::stsample::{self, KernelConfig, VolatilityPanel};
use crate::synth::{self, DeskFixture};
use crate::validate;

pub const STAGES: [&str; 6] = ["geo", "bids", "sample", "disagg", "restore", "validate"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub snapshot: PathBuf,
    pub registry: PathBuf,
    pub history: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offers: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Granularity {
    pub source_minutes: u32,
    pub target_minutes: u32,
}

impl Default for Granularity {
    fn default() -> Self {
        Granularity {
            source_minutes: 30,
            target_minutes: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeoConfig {
    /// Line length per unit resistance. Calibrated from `anchors` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub km_per_ohm: Option<f64>,
    /// Known bus → registry location pairs, keyed by bus id.
    pub anchors: BTreeMap<String, String>,
    pub starts: usize,
    pub budget: SearchBudget,
    pub voltage_classes: VoltageClasses,
}

impl Default for GeoConfig {
    fn default() -> Self {
        GeoConfig {
            km_per_ohm: None,
            anchors: BTreeMap::new(),
            starts: 4,
            budget: SearchBudget {
                stagnation: 50,
                ..SearchBudget::default()
            },
            voltage_classes: VoltageClasses::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BidsConfig {
    pub horizon_hours: u32,
    #[serde(flatten)]
    pub policy: MatchPolicy,
}

impl Default for BidsConfig {
    fn default() -> Self {
        BidsConfig {
            horizon_hours: 24,
            policy: MatchPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Periods per independently sampled chunk.
    pub chunk_periods: usize,
    /// Write the multipliers to `sample/panel_<quantity>.csv`.
    pub dump_panel: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            chunk_periods: 48,
            dump_panel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    /// Marginal noise levels of the reconstruction comparison.
    pub baseline_noise: Vec<f64>,
    /// Neighbours in the overlap score.
    pub k: usize,
    /// Pearson window in source periods; one day when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pearson_window: Option<usize>,
    /// Spatial length scale of the correlated reconstruction.
    pub sigma_km: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            baseline_noise: vec![0.05, 0.10],
            k: 5,
            pearson_window: None,
            sigma_km: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub parallelism: usize,
    #[serde(default = "default_derate")]
    pub derate: f64,
    pub out_dir: PathBuf,
    /// Target periods kept after interpolation; all when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_periods: Option<usize>,
    pub inputs: Inputs,
    #[serde(default)]
    pub granularity: Granularity,
    #[serde(default)]
    pub geo: GeoConfig,
    #[serde(default)]
    pub bids: BidsConfig,
    /// Kernel per quantity; missing quantities use the defaults.
    #[serde(default)]
    pub kernels: BTreeMap<Quantity, KernelConfig>,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub restore: RestoreOptions,
    #[serde(default)]
    pub validation: ValidationConfig,
}

fn default_derate() -> f64 {
    0.95
}

impl RunConfig {
    /// Reads a config file. Relative paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), None, e.message()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.out_dir);
        resolve(&mut cfg.inputs.snapshot);
        resolve(&mut cfg.inputs.registry);
        resolve(&mut cfg.inputs.history);
        if let Some(p) = cfg.inputs.offers.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn kernel(&self, q: Quantity) -> KernelConfig {
        self.kernels.get(&q).copied().unwrap_or_default()
    }

    /// Everything that can be checked without reading the inputs.
    pub fn validate(&self) -> Result<()> {
        let g = self.granularity;
        if g.source_minutes == 0 || g.target_minutes == 0 || g.source_minutes % g.target_minutes != 0 {
            return Err(Error::Invalid(format!(
                "target granularity {} min must be positive and divide source granularity {} min",
                g.target_minutes, g.source_minutes
            )));
        }
        if !(self.derate > 0.0 && self.derate <= 1.0) {
            return Err(Error::Invalid(format!("derate must lie in (0, 1], got {}", self.derate)));
        }
        let mut paths = vec![&self.inputs.snapshot, &self.inputs.registry, &self.inputs.history];
        paths.extend(self.inputs.offers.as_ref());
        for p in paths {
            if !p.is_file() {
                return Err(Error::Invalid(format!("input file {} does not exist", p.display())));
            }
        }
        for (q, k) in &self.kernels {
            k.validate().map_err(|e| Error::Invalid(format!("{q} kernel: {e}")))?;
        }
        if let Some(k) = self.geo.km_per_ohm {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::Invalid(format!("km_per_ohm must be positive, got {k}")));
            }
        } else if self.geo.anchors.is_empty() {
            return Err(Error::Invalid("geo needs either km_per_ohm or anchors".into()));
        }
        if self.sampling.chunk_periods == 0 {
            return Err(Error::Invalid("sampling chunk_periods must be positive".into()));
        }
        if self.bids.horizon_hours == 0 {
            return Err(Error::Invalid("bids horizon_hours must be positive".into()));
        }
        if let Some(&s) = self.validation.baseline_noise.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Invalid(format!("baseline noise levels must be positive, got {s}")));
        }
        if self.validation.k == 0 || !(self.validation.sigma_km > 0.0) {
            return Err(Error::Invalid("validation k and sigma_km must be positive".into()));
        }
        if self.horizon_periods == Some(0) {
            return Err(Error::Invalid("horizon_periods must be positive".into()));
        }
        Ok(())
    }

    /// The configuration shipped with the desk fixture, with paths relative
    /// to the fixture directory.
    pub fn desk(seed: u64) -> Self {
        RunConfig {
            seed,
            parallelism: 1,
            derate: 0.95,
            out_dir: "out".into(),
            horizon_periods: Some(288),
            inputs: Inputs {
                snapshot: "snapshot.json".into(),
                registry: "registry.csv".into(),
                history: "regional_history.csv".into(),
                offers: Some("offers.csv".into()),
            },
            granularity: Granularity::default(),
            geo: GeoConfig {
                km_per_ohm: Some(synth::DESK_KM_PER_OHM),
                ..GeoConfig::default()
            },
            bids: BidsConfig::default(),
            kernels: Quantity::ALL.iter().map(|&q| (q, KernelConfig::default())).collect(),
            sampling: SamplingConfig::default(),
            restore: RestoreOptions::default(),
            validation: ValidationConfig::default(),
        }
    }
}

/// Writes the desk fixture and its `config.toml` into `dir`.
pub fn write_desk_bundle(fixture: &DeskFixture, seed: u64, dir: &Path) -> Result<PathBuf> {
    synth::write_desk_fixture(fixture, dir)?;
    let path = dir.join("config.toml");
    std::fs::write(&path, RunConfig::desk(seed).to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// What a stage produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageOutput {
    pub summary: Value,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Complete,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileDigest {
    /// Relative to the output directory, or as configured for inputs.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub seconds: f64,
    pub summary: Value,
    pub outputs: Vec<FileDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    /// `complete` or `incomplete`.
    pub status: String,
    pub seed: u64,
    pub parallelism: usize,
    pub inputs: Vec<FileDigest>,
    pub stages: Vec<StageRecord>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::Invalid(format!("cannot serialize {}: {e}", path.display())))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loaded inputs plus the configuration they came from.
pub struct Pipeline {
    pub config: RunConfig,
    pub snapshot: NetworkSnapshot,
    pub registry: GeoRegistry,
    pub history: RegionalHistory,
    pub offers: Option<Vec<OfferRecord>>,
}

impl Pipeline {
    /// Validates the configuration and reads every input; nothing is written.
    pub fn open(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let snapshot = load_snapshot(&config.inputs.snapshot)?;
        let registry = load_geo_registry(&config.inputs.registry)?;
        let history = load_regional_history(&config.inputs.history, Some(&snapshot.region_ids()))?;
        let offers = config.inputs.offers.as_ref().map(load_offers).transpose()?;
        let load = history
            .get(Quantity::Load)
            .ok_or_else(|| Error::Invalid("regional history has no load series".into()))?;
        for s in history.series.values() {
            if s.period_minutes != config.granularity.source_minutes {
                return Err(Error::Invalid(format!(
                    "history is at {} min but the source granularity is {} min",
                    s.period_minutes, config.granularity.source_minutes
                )));
            }
        }
        if let Some(n) = config.horizon_periods {
            let k = (config.granularity.source_minutes / config.granularity.target_minutes) as usize;
            let available = k * load.periods().saturating_sub(1) + 1;
            if n > available {
                return Err(Error::Invalid(format!(
                    "horizon of {n} periods exceeds the {available} interpolated periods"
                )));
            }
        }
        Ok(Pipeline {
            config,
            snapshot,
            registry,
            history,
            offers,
        })
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.config.out_dir.join(rel)
    }

    fn assignment_path(&self) -> PathBuf {
        self.out("geo/assignment.csv")
    }

    pub fn run_stage(&self, name: &str) -> Result<StageOutput> {
        match name {
            "geo" => self.geo(),
            "bids" => self.bids(),
            "sample" => self.sample(),
            "disagg" => self.disagg(),
            "restore" => self.restore(None),
            "validate" => self.validate(),
            other => Err(Error::Invalid(format!("unknown stage '{other}'"))),
        }
    }

    fn km_per_ohm(&self) -> Result<f64> {
        if let Some(k) = self.config.geo.km_per_ohm {
            return Ok(k);
        }
        let anchors = self
            .config
            .geo
            .anchors
            .iter()
            .map(|(b, l)| {
                let bus: BusId = b.trim().parse().map_err(|_| Error::Invalid(format!("anchor key '{b}' is not a bus id")))?;
                Ok((bus, l.clone()))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        geo_recon::calibrate_km_per_ohm(&self.snapshot, &self.registry, &anchors)
            .ok_or_else(|| Error::Invalid("anchors cover no branch; cannot calibrate km_per_ohm".into()))
    }

    pub fn geo(&self) -> Result<StageOutput> {
        let g = &self.config.geo;
        let km_per_ohm = self.km_per_ohm()?;
        let p = geo_recon::build_problem(&self.snapshot, &self.registry, &g.voltage_classes, km_per_ohm)?;
        let (a, report) =
            geo_recon::local_search_multistart(&p, derive_seed(self.config.seed, "geo", 0), g.budget, g.starts)?;
        let path = self.assignment_path();
        let mut w = create(&path)?;
        geo_recon::write_assignment_csv(&geo_recon::placements(&p, &a), &mut w).map_err(|e| Error::io(&path, e))?;
        finish(w, &path)?;
        let summary = json!({
            "substations": p.len(),
            "candidates": p.location_ids.len(),
            "km_per_ohm": km_per_ohm,
            "objective_km2": a.objective,
            "greedy_objective_km2": report.greedy_objective,
            "evaluations": report.evaluations,
        });
        let summary_path = self.out("geo/summary.json");
        write_json(&summary_path, &summary)?;
        Ok(StageOutput {
            summary,
            files: vec![path, summary_path],
        })
    }

    pub fn bids(&self) -> Result<StageOutput> {
        let Some(offers) = &self.offers else {
            return Ok(StageOutput {
                summary: json!({"skipped": "no offers configured"}),
                files: vec![],
            });
        };
        let participants = bid_map::infer_participants(offers)?;
        let matches = bid_map::match_generators(&participants, &self.snapshot, &self.config.bids.policy)?;
        let series = bid_map::offer_series(&matches, offers, self.config.bids.horizon_hours)?;
        let (mp, sp) = (self.out("bids/matches.csv"), self.out("bids/offer_series.csv"));
        let mut w = create(&mp)?;
        bid_map::write_matches_csv(&matches, &mut w).map_err(|e| Error::io(&mp, e))?;
        finish(w, &mp)?;
        let mut w = create(&sp)?;
        bid_map::write_offer_series_csv(&series, &mut w).map_err(|e| Error::io(&sp, e))?;
        finish(w, &sp)?;
        Ok(StageOutput {
            summary: json!({
                "participants": participants.len(),
                "matched_generators": matches.len(),
                "substituted": matches.iter().filter(|m| m.substituted_from.is_some()).count(),
                "offer_rows": series.len(),
            }),
            files: vec![mp, sp],
        })
    }

    fn bus_coordinates(&self) -> Result<BTreeMap<BusId, (f64, f64)>> {
        let path = self.assignment_path();
        if !path.is_file() {
            return Err(Error::Invalid(format!("{} is missing; run the geo stage first", path.display())));
        }
        Ok(geo_recon::read_assignment_csv(&path)?
            .into_iter()
            .map(|(b, p)| (b, (p.lat, p.lon)))
            .collect())
    }

    /// Contribution vectors and component buses of each quantity that has
    /// both a history and components.
    fn shares(&self) -> Result<Vec<(Quantity, ContributionVector, Vec<BusId>)>> {
        let mut out = Vec::new();
        for q in Quantity::ALL {
            if self.history.get(q).is_none() {
                continue;
            }
            let (cv, bus_of): (ContributionVector, BTreeMap<u32, BusId>) = match q {
                Quantity::Load => (
                    contribution_vectors(&self.snapshot, ZeroWeightPolicy::Error)?,
                    self.snapshot.loads.iter().map(|l| (l.id, l.bus)).collect(),
                ),
                _ => (
                    capacity_contribution_vectors(&self.snapshot, q.as_str(), ZeroWeightPolicy::Error)?,
                    self.snapshot.generators.iter().map(|g| (g.id, g.bus)).collect(),
                ),
            };
            if cv.is_empty() {
                log::warn!("no {q} components in the snapshot; {q} history is not disaggregated");
                continue;
            }
            let buses = cv.component_order().iter().map(|(_, id)| bus_of[id]).collect();
            out.push((q, cv, buses));
        }
        Ok(out)
    }

    /// Draws the multipliers of every disaggregated quantity. Each quantity
    /// has its own seed so adding one never changes the others.
    fn panels(&self) -> Result<Vec<(Quantity, ContributionVector, VolatilityPanel)>> {
        let coords = self.bus_coordinates()?;
        self.shares()?
            .into_iter()
            .map(|(q, cv, buses)| {
                let pts = buses
                    .iter()
                    .map(|b| coords.get(b).copied().ok_or_else(|| Error::Invalid(format!("bus {b} has no location"))))
                    .collect::<Result<Vec<_>>>()?;
                let periods = self.history.get(q).expect("quantity has history").periods();
                let qi = Quantity::ALL.iter().position(|x| *x == q).expect("known quantity") as u64;
                let panel = stsample::sample_horizon(
                    &stsample::distance_matrix(&pts),
                    periods,
                    self.config.sampling.chunk_periods,
                    &self.config.kernel(q),
                    derive_seed(self.config.seed, "sample", qi),
                )?;
                Ok((q, cv, panel))
            })
            .collect()
    }

    pub fn sample(&self) -> Result<StageOutput> {
        let mut stats = serde_json::Map::new();
        let mut files = Vec::new();
        for (q, cv, panel) in self.panels()? {
            let v = &panel.values;
            let mean = v.mean();
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len().max(2) - 1) as f64).sqrt();
            stats.insert(
                q.to_string(),
                json!({
                    "components": v.nrows(),
                    "periods": v.ncols(),
                    "seed": panel.seed,
                    "mean": mean,
                    "std": std,
                    "expected_std": panel.config.marginal_std(),
                    "clipped": panel.clipped,
                }),
            );
            if self.config.sampling.dump_panel {
                let path = self.out(&format!("sample/panel_{q}.csv"));
                let ids: Vec<u32> = cv.component_order().iter().map(|(_, id)| *id).collect();
                let mut w = create(&path)?;
                stsample::write_panel_csv(&panel, &ids, &mut w)?;
                finish(w, &path)?;
                files.push(path);
            }
        }
        let summary = Value::Object(stats);
        let path = self.out("sample/summary.json");
        write_json(&path, &summary)?;
        files.insert(0, path);
        Ok(StageOutput { summary, files })
    }

    fn target_regional(&self, q: Quantity) -> Result<RegionalSeries> {
        let s = self.history.get(q).ok_or_else(|| Error::Invalid(format!("no {q} history")))?;
        let mut fine = disagg::interpolate_regional(s, self.config.granularity.target_minutes)?;
        if let Some(n) = self.config.horizon_periods {
            fine.values = fine.values.columns(0, n).into_owned();
        }
        Ok(fine)
    }

    pub fn disagg(&self) -> Result<StageOutput> {
        let mut stats = serde_json::Map::new();
        let mut files = Vec::new();
        for (q, cv, panel) in self.panels()? {
            let regional = self.history.get(q).expect("quantity has history");
            let coarse = disagg::disaggregate(regional, &cv, &panel)?;
            let mut fine = disagg::interpolate(&coarse, self.config.granularity.target_minutes)?;
            if let Some(n) = self.config.horizon_periods {
                fine.values = fine.values.columns(0, n).into_owned();
            }
            let totals = self.target_regional(q)?;
            let worst = conservation_error(&fine, &totals);
            let path = self.out(&format!("disagg/{q}.csv"));
            let mut w = create(&path)?;
            disagg::write_component_csv([&fine], &mut w)?;
            finish(w, &path)?;
            files.push(path);
            stats.insert(
                q.to_string(),
                json!({
                    "components": fine.component_ids.len(),
                    "periods": fine.periods(),
                    "period_minutes": fine.period_minutes,
                    "max_relative_conservation_error": worst,
                }),
            );
        }
        Ok(StageOutput {
            summary: Value::Object(stats),
            files,
        })
    }

    fn component_regions(&self, q: Quantity) -> BTreeMap<u32, RegionId> {
        let bus_region = self.snapshot.bus_regions();
        match q {
            Quantity::Load => self.snapshot.loads.iter().map(|l| (l.id, bus_region[&l.bus])).collect(),
            _ => self
                .snapshot
                .generators
                .iter()
                .filter(|g| g.fuel == q.as_str())
                .map(|g| (g.id, bus_region[&g.bus]))
                .collect(),
        }
    }

    fn read_series(&self, q: Quantity, path: &Path) -> Result<ComponentSeries> {
        let mut all = disagg::load_component_csv(path, &self.component_regions(q))?;
        all.retain(|s| s.quantity == q);
        match all.len() {
            1 => Ok(all.pop().expect("one series")),
            0 => Err(Error::Invalid(format!("{} holds no {q} series", path.display()))),
            _ => Err(Error::Invalid(format!("{} holds several {q} series", path.display()))),
        }
    }

    /// Restores the load series, from `input` when given and from the disagg
    /// stage otherwise. Renewable units are capped per period by their
    /// disaggregated output when that is available.
    pub fn restore(&self, input: Option<&Path>) -> Result<StageOutput> {
        let model = DCModel::new(&self.snapshot, self.config.derate)?;
        let load_path = input.map(Path::to_path_buf).unwrap_or_else(|| self.out("disagg/load.csv"));
        let series = self.read_series(Quantity::Load, &load_path)?;
        let totals = self.target_regional(Quantity::Load)?;
        if series.period_minutes != totals.period_minutes || series.periods() != totals.periods() || series.start != totals.start {
            return Err(Error::Invalid(format!(
                "{} covers {} periods of {} min from {}, the regional load {} periods of {} min from {}",
                load_path.display(),
                series.periods(),
                series.period_minutes,
                series.start,
                totals.periods(),
                totals.period_minutes,
                totals.start
            )));
        }

        let mut renewable: Vec<(u32, f64, Vec<f64>)> = Vec::new();
        for q in [Quantity::Wind, Quantity::Solar] {
            let path = self.out(&format!("disagg/{q}.csv"));
            if !path.is_file() {
                continue;
            }
            let s = self.read_series(q, &path)?;
            if s.periods() != series.periods() || s.start != series.start {
                return Err(Error::Invalid(format!("{} does not share the load time grid", path.display())));
            }
            for (row, &id) in s.component_ids.iter().enumerate() {
                let k = model.generator_index(id).ok_or_else(|| Error::Invalid(format!("unknown generator {id}")))?;
                let p_max = model.default_bounds().p_max[k];
                renewable.push((id, p_max, s.values.row(row).iter().copied().collect()));
            }
        }
        let base = model.default_bounds();
        let bounds_for = |t: usize| {
            let mut b = base.clone();
            for (id, cap, values) in &renewable {
                b.set(&model, *id, 0.0, values[t].clamp(0.0, *cap))?;
            }
            Ok(b)
        };
        let l0: Vec<f64> = {
            let nominal: BTreeMap<u32, f64> = self.snapshot.loads.iter().map(|l| (l.id, l.nominal_mw)).collect();
            model.load_ids().iter().map(|id| nominal[id]).collect()
        };
        let (restored, reports) = dcfeas::restore_horizon(&model, &series, &totals, &l0, bounds_for, &self.config.restore, 0)?;

        let (lp, rp) = (self.out("restore/load.csv"), self.out("restore/report.csv"));
        let mut w = create(&lp)?;
        disagg::write_component_csv([&restored], &mut w)?;
        finish(w, &lp)?;
        let mut w = create(&rp)?;
        dcfeas::write_report_csv(&reports, &mut w)?;
        finish(w, &rp)?;
        let restored_count = reports.iter().filter(|r| r.status == RestoreStatus::Restored).count();
        Ok(StageOutput {
            summary: json!({
                "periods": reports.len(),
                "restored": restored_count,
                "unchanged": reports.len() - restored_count,
                "total_objective": reports.iter().map(|r| r.objective).sum::<f64>(),
                "max_l1_change_mw": reports.iter().map(|r| r.l1_change_mw).fold(0.0, f64::max),
                "max_relative_conservation_error": conservation_error(&restored, &totals),
            }),
            files: vec![lp, rp],
        })
    }

    /// Historical regional load against reconstructions of it from the
    /// national total: correlated multipliers over region centroids versus
    /// fixed shares with independent noise, at each configured noise level.
    pub fn validate(&self) -> Result<StageOutput> {
        let v = &self.config.validation;
        let hist = self.history.get(Quantity::Load).ok_or_else(|| Error::Invalid("no load history".into()))?;
        let coords = self.bus_coordinates()?;
        let bus_region = self.snapshot.bus_regions();
        let mut centroid: BTreeMap<RegionId, (f64, f64, f64)> = BTreeMap::new();
        for (b, (lat, lon)) in &coords {
            if let Some(r) = bus_region.get(b) {
                let c = centroid.entry(*r).or_default();
                *c = (c.0 + lat, c.1 + lon, c.2 + 1.0);
            }
        }
        let pts = hist
            .regions
            .iter()
            .map(|r| {
                centroid
                    .get(r)
                    .map(|c| (c.0 / c.2, c.1 / c.2))
                    .ok_or_else(|| Error::Invalid(format!("region {r} has no placed bus")))
            })
            .collect::<Result<Vec<_>>>()?;

        let national = hist.national_total();
        let grand: f64 = national.iter().sum();
        if !(grand > 0.0) {
            return Err(Error::Invalid("historical load is zero".into()));
        }
        let mean_shares: Vec<f64> = (0..hist.regions.len()).map(|r| hist.values.row(r).sum() / grand).collect();
        let cv = ContributionVector::from_weights(
            &[0],
            hist.regions.iter().zip(&mean_shares).map(|(&r, &w)| (r, 0, w)),
            ZeroWeightPolicy::Uniform,
            true,
        )?;
        let national_series = RegionalSeries::new(
            Quantity::Load,
            vec![0],
            hist.start,
            hist.period_minutes,
            DMatrix::from_row_slice(1, national.len(), &national),
        )?;
        let as_regional = |values: DMatrix<f64>| {
            RegionalSeries::new(Quantity::Load, hist.regions.clone(), hist.start, hist.period_minutes, values)
        };

        let window = v.pearson_window.unwrap_or((24 * 60 / hist.period_minutes.max(1)) as usize).min(hist.periods());
        let pearson = validate::mean_pearson(hist, window)?;
        let pp = self.out("validate/pearson_historical.csv");
        let mut w = create(&pp)?;
        validate::write_pearson_csv(&pearson, &mut w)?;
        finish(w, &pp)?;
        let mut files = vec![pp];

        let distances = stsample::distance_matrix(&pts);
        let mut comparisons = Vec::new();
        for (i, &noise) in v.baseline_noise.iter().enumerate() {
            let cfg = KernelConfig {
                alpha: KernelConfig::alpha_for_std(noise),
                sigma_km: v.sigma_km,
                theta: self.config.kernel(Quantity::Load).theta,
                clip_floor: self.config.kernel(Quantity::Load).clip_floor,
            };
            let panel = stsample::sample_horizon(
                &distances,
                hist.periods(),
                self.config.sampling.chunk_periods,
                &cfg,
                derive_seed(self.config.seed, "validate-correlated", i as u64),
            )?;
            let correlated = as_regional(disagg::disaggregate(&national_series, &cv, &panel)?.values)?;
            let ratios: Vec<(u32, RegionId, f64)> = hist.regions.iter().zip(&mean_shares).map(|(&r, &p)| (r, r, p)).collect();
            let uniform = as_regional(
                disagg::baseline_uniform(
                    Quantity::Load,
                    &national,
                    hist.start,
                    hist.period_minutes,
                    &ratios,
                    noise,
                    derive_seed(self.config.seed, "validate-uniform", i as u64),
                )?
                .values,
            )?;
            let mut entry = serde_json::Map::new();
            entry.insert("noise_std".into(), json!(noise));
            for (label, syn) in [("correlated", &correlated), ("uniform", &uniform)] {
                let report = validate::compare_regional(hist, syn, v.k)?;
                let path = self.out(&format!("validate/projection_{label}_{:03}.csv", (noise * 100.0).round() as u32));
                let mut w = create(&path)?;
                validate::write_projection_csv(&report, &mut w)?;
                finish(w, &path)?;
                files.push(path);
                entry.insert(label.into(), serde_json::to_value(&report).expect("report serializes"));
            }
            comparisons.push(Value::Object(entry));
        }
        let report = json!({
            "quantity": "load",
            "historical_pearson": pearson,
            "comparisons": comparisons,
        });
        let rp = self.out("validate/report.json");
        write_json(&rp, &report)?;
        files.insert(0, rp);
        let summary = json!({
            "pearson_undefined": pearson.undefined,
            "overlap": comparisons.iter().map(|c| json!({
                "noise_std": c["noise_std"],
                "correlated": c["correlated"]["overlap"],
                "uniform": c["uniform"]["overlap"],
            })).collect::<Vec<_>>(),
        });
        Ok(StageOutput { summary, files })
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.config.out_dir).unwrap_or(p).display().to_string()
    }

    fn digests(&self, files: &[PathBuf]) -> Result<Vec<FileDigest>> {
        files
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: self.relative(p),
                    sha256: sha256_file(p)?,
                })
            })
            .collect()
    }
}

fn conservation_error(series: &ComponentSeries, totals: &RegionalSeries) -> f64 {
    let (regions, sums) = series.regional_totals();
    let mut worst: f64 = 0.0;
    for (i, r) in regions.iter().enumerate() {
        if let Some(j) = totals.region_index(*r) {
            for t in 0..series.periods().min(totals.periods()) {
                let want = totals.values[(j, t)];
                worst = worst.max((sums[(i, t)] - want).abs() / want.abs().max(1.0));
            }
        }
    }
    worst
}

/// Runs a closure on a pool of `threads` workers (0 for every core).
pub fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Invalid(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Runs every stage in order and writes `manifest.json`. The manifest is
/// rewritten after each stage, so an interrupted run leaves it marked
/// incomplete.
pub fn run_pipeline(config: RunConfig) -> Result<Manifest> {
    let pipeline = Pipeline::open(config)?;
    with_pool(pipeline.config.parallelism, || run_stages(&pipeline))?
}

fn run_stages(p: &Pipeline) -> Result<Manifest> {
    let cfg = &p.config;
    let mut inputs = vec![
        ("snapshot", &cfg.inputs.snapshot),
        ("registry", &cfg.inputs.registry),
        ("history", &cfg.inputs.history),
    ];
    inputs.extend(cfg.inputs.offers.as_ref().map(|o| ("offers", o)));
    let mut manifest = Manifest {
        status: "incomplete".into(),
        seed: cfg.seed,
        parallelism: cfg.parallelism,
        inputs: inputs
            .into_iter()
            .map(|(name, path)| {
                Ok(FileDigest {
                    path: format!("{name}:{}", path.display()),
                    sha256: sha256_file(path)?,
                })
            })
            .collect::<Result<_>>()?,
        stages: Vec::new(),
    };
    let manifest_path = cfg.out_dir.join("manifest.json");
    write_json(&manifest_path, &manifest)?;

    for name in STAGES {
        log::info!("stage {name}");
        let started = Instant::now();
        let result = p.run_stage(name).and_then(|o| Ok((p.digests(&o.files)?, o)));
        let seconds = started.elapsed().as_secs_f64();
        match result {
            Ok((outputs, o)) => manifest.stages.push(StageRecord {
                name: name.into(),
                status: if o.files.is_empty() { StageStatus::Skipped } else { StageStatus::Complete },
                seconds,
                summary: o.summary,
                outputs,
                error: None,
            }),
            Err(e) => {
                manifest.stages.push(StageRecord {
                    name: name.into(),
                    status: StageStatus::Failed,
                    seconds,
                    summary: Value::Null,
                    outputs: vec![],
                    error: Some(e.to_string()),
                });
                write_json(&manifest_path, &manifest)?;
                return Err(Error::Stage {
                    stage: name.into(),
                    source: Box::new(e),
                });
            }
        }
        write_json(&manifest_path, &manifest)?;
    }
    manifest.status = "complete".into();
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

/// Compares a synthetic regional series with a historical one. Both files
/// use the regional history format; a synthetic file at a finer granularity
/// is read at the historical timestamps.
pub fn validate_files(historical: &Path, synthetic: &Path, quantity: Quantity, k: usize, out_dir: &Path) -> Result<Value> {
    let h = load_regional_history(historical, None)?;
    let s = load_regional_history(synthetic, None)?;
    let hist = h.get(quantity).ok_or_else(|| Error::Invalid(format!("{} has no {quantity} series", historical.display())))?;
    let syn = s.get(quantity).ok_or_else(|| Error::Invalid(format!("{} has no {quantity} series", synthetic.display())))?;
    let syn = align(syn, hist)?;
    let report = validate::compare_regional(hist, &syn, k)?;
    let window = ((24 * 60) / hist.period_minutes.max(1)) as usize;
    let ph = validate::mean_pearson(hist, window.min(hist.periods()))?;
    let ps = validate::mean_pearson(&syn, window.min(syn.periods()))?;
    let value = json!({
        "quantity": quantity,
        "projection": report,
        "historical_pearson": ph,
        "synthetic_pearson": ps,
    });
    write_json(&out_dir.join("report.json"), &value)?;
    let path = out_dir.join("projection.csv");
    let mut w = create(&path)?;
    validate::write_projection_csv(&report, &mut w)?;
    finish(w, &path)?;
    Ok(value)
}

fn align(syn: &RegionalSeries, hist: &RegionalSeries) -> Result<RegionalSeries> {
    if syn.regions != hist.regions {
        return Err(Error::Invalid("historical and synthetic series cover different regions".into()));
    }
    if syn.start != hist.start || hist.period_minutes % syn.period_minutes != 0 {
        return Err(Error::Invalid(format!(
            "synthetic series ({} min from {}) is not on the historical grid ({} min from {})",
            syn.period_minutes, syn.start, hist.period_minutes, hist.start
        )));
    }
    let step = (hist.period_minutes / syn.period_minutes) as usize;
    let periods = hist.periods().min((syn.periods() + step - 1) / step);
    let values = DMatrix::from_fn(syn.regions.len(), periods, |r, t| syn.values[(r, t * step)]);
    RegionalSeries::new(syn.quantity, syn.regions.clone(), syn.start, hist.period_minutes, values)
}
