//! Data ingestion: sub-daily solar samples and daily prices to per-day records.
//!
//! CSV layouts:
//!
//! - `solar.csv`: `day,timestep,vmp,imp` (48 timesteps per day)
//! - `prices.csv`: `day,price`
//! - `dataset.csv`: `day,price,generation` (joined, for audit and reload)

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;

use crate::env::wattage;
use crate::{seeded_rng, Error, Result};

pub const TIMESTEPS_PER_DAY: u32 = 48;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarSample {
    pub day: u32,
    pub timestep: u32,
    pub vmp: f64,
    pub imp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayRecord {
    pub day: u32,
    pub price: f64,
    pub generation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Csv,
    Synthetic { seed: u64 },
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Csv => f.write_str("real-csv"),
            Provenance::Synthetic { seed } => write!(f, "synthetic+{seed}"),
        }
    }
}

/// Ordered daily records with contiguous, strictly increasing day indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    days: Vec<DayRecord>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(days: Vec<DayRecord>, provenance: Provenance) -> Result<Self> {
        for pair in days.windows(2) {
            if pair[1].day != pair[0].day + 1 {
                return Err(Error::Validation(format!(
                    "day indices not contiguous: {} followed by {}",
                    pair[0].day, pair[1].day
                )));
            }
        }
        for d in &days {
            if !(d.price.is_finite() && d.price > 0.0) {
                return Err(Error::Validation(format!("day {}: price must be positive", d.day)));
            }
            if !(d.generation.is_finite() && d.generation >= 0.0) {
                return Err(Error::Validation(format!(
                    "day {}: generation must be non-negative",
                    d.day
                )));
            }
        }
        Ok(Self { days, provenance })
    }

    /// Subset of days that need not be contiguous (random splits).
    fn subset(days: Vec<DayRecord>, provenance: Provenance) -> Self {
        Self { days, provenance }
    }

    pub fn days(&self) -> &[DayRecord] {
        &self.days
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn prices(&self) -> Vec<f64> {
        self.days.iter().map(|d| d.price).collect()
    }

    pub fn generation(&self) -> Vec<f64> {
        self.days.iter().map(|d| d.generation).collect()
    }
}

/// Per-feature scaling for the observation vector, fitted on a training split
/// and reused unchanged at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub price_mean: f64,
    pub price_std: f64,
    pub gen_mean: f64,
    pub gen_std: f64,
    /// Stored wattage is divided by this (a month of mean generation).
    pub storage_scale: f64,
    /// Rewards enter the observation as `ln(1 + r / reward_scale)`.
    pub reward_scale: f64,
}

impl Normalizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Validation("cannot fit normalizer on an empty split".into()));
        }
        let (pm, ps) = mean_std(&train.prices());
        let (gm, gs) = mean_std(&train.generation());
        let floor = |x: f64| if x > 1e-12 { x } else { 1.0 };
        Ok(Self {
            price_mean: pm,
            price_std: floor(ps),
            gen_mean: gm,
            gen_std: floor(gs),
            storage_scale: floor(30.0 * gm),
            reward_scale: floor(pm * gm),
        })
    }

    pub fn price(&self, p: f64) -> f64 {
        (p - self.price_mean) / self.price_std
    }

    pub fn generation(&self, g: f64) -> f64 {
        (g - self.gen_mean) / self.gen_std
    }

    pub fn storage(&self, w: f64) -> f64 {
        w / self.storage_scale
    }

    pub fn reward(&self, r: f64) -> f64 {
        (r / self.reward_scale).ln_1p()
    }
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file))
}

fn check_header(rdr: &mut csv::Reader<std::fs::File>, want: &[&str], path: &Path) -> Result<()> {
    let headers = rdr.headers().map_err(|e| csv_err(e, path))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != want {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header `{}`, found `{}`", want.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn csv_err(e: csv::Error, path: &Path) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            line,
            msg: format!("{kind:?}"),
        },
    }
}

#[derive(Deserialize)]
struct SolarRow {
    day: u32,
    timestep: u32,
    vmp: f64,
    imp: f64,
}

pub fn load_solar_csv(path: &Path) -> Result<Vec<SolarSample>> {
    let mut rdr = open_csv(path)?;
    check_header(&mut rdr, &["day", "timestep", "vmp", "imp"], path)?;
    let mut out = Vec::new();
    let mut per_day: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for rec in rdr.deserialize::<SolarRow>() {
        let row = rec.map_err(|e| csv_err(e, path))?;
        let line = out.len() as u64 + 2;
        if row.timestep >= TIMESTEPS_PER_DAY {
            return Err(Error::Validation(format!(
                "line {line}: timestep {} out of range 0..{}",
                row.timestep, TIMESTEPS_PER_DAY
            )));
        }
        if !(row.vmp.is_finite() && row.imp.is_finite()) || row.vmp < 0.0 || row.imp < 0.0 {
            return Err(Error::Validation(format!(
                "line {line}: vmp and imp must be finite and non-negative"
            )));
        }
        let steps = per_day.entry(row.day).or_default();
        if !steps.insert(row.timestep) {
            return Err(Error::Validation(format!(
                "line {line}: day {} timestep {} appears twice",
                row.day, row.timestep
            )));
        }
        if steps.len() > TIMESTEPS_PER_DAY as usize {
            return Err(Error::Validation(format!(
                "day {} has more than {TIMESTEPS_PER_DAY} timesteps",
                row.day
            )));
        }
        out.push(SolarSample {
            day: row.day,
            timestep: row.timestep,
            vmp: row.vmp,
            imp: row.imp,
        });
    }
    Ok(out)
}

/// Daily generation: the sum of `vmp·imp` over each day's samples.
///
/// Days absent from `samples` simply do not appear; [`join_days`] treats a
/// priced day without samples as zero generation.
pub fn aggregate_daily(samples: &[SolarSample]) -> Vec<(u32, f64)> {
    let mut by_day: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for s in samples {
        by_day
            .entry(s.day)
            .or_default()
            .push(wattage(s.vmp, s.imp).unwrap_or(0.0));
    }
    by_day
        .into_iter()
        .map(|(day, mut w)| {
            // sorted summation keeps the total independent of sample order
            w.sort_by(f64::total_cmp);
            (day, w.iter().sum())
        })
        .collect()
}

#[derive(Deserialize)]
struct PriceRow {
    day: u32,
    price: f64,
}

pub fn load_prices_csv(path: &Path) -> Result<Vec<(u32, f64)>> {
    let mut rdr = open_csv(path)?;
    check_header(&mut rdr, &["day", "price"], path)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for rec in rdr.deserialize::<PriceRow>() {
        let row = rec.map_err(|e| csv_err(e, path))?;
        let line = out.len() as u64 + 2;
        if !(row.price.is_finite() && row.price > 0.0) {
            return Err(Error::Validation(format!(
                "line {line}: price must be positive, got {}",
                row.price
            )));
        }
        if !seen.insert(row.day) {
            return Err(Error::Validation(format!("line {line}: duplicate day {}", row.day)));
        }
        out.push((row.day, row.price));
    }
    Ok(out)
}

/// Inner join of generation and prices on day index.
///
/// A priced day that is missing from `generation` is kept only when
/// `missing_generation_is_zero` is set (solar ingestion: no samples means no
/// sun recorded); otherwise unmatched days on either side are dropped.
pub fn join_days(
    generation: &[(u32, f64)],
    prices: &[(u32, f64)],
    missing_generation_is_zero: bool,
) -> Result<Dataset> {
    let gen: BTreeMap<u32, f64> = generation.iter().copied().collect();
    let mut days = Vec::new();
    let mut dropped = 0usize;
    for &(day, price) in prices {
        match gen.get(&day) {
            Some(&g) => days.push(DayRecord {
                day,
                price,
                generation: g,
            }),
            None if missing_generation_is_zero => days.push(DayRecord {
                day,
                price,
                generation: 0.0,
            }),
            None => dropped += 1,
        }
    }
    let priced: BTreeSet<u32> = prices.iter().map(|p| p.0).collect();
    dropped += gen.keys().filter(|d| !priced.contains(d)).count();
    if dropped > 0 {
        log::info!("join_days: dropped {dropped} unmatched day(s)");
    }
    if days.is_empty() {
        return Err(Error::Validation("price and generation days do not overlap".into()));
    }
    days.sort_by_key(|d| d.day);
    Dataset::new(days, Provenance::Csv)
}

/// Loads `solar.csv` + `prices.csv` into a joined dataset.
pub fn load_dataset(solar: &Path, prices: &Path) -> Result<Dataset> {
    let samples = load_solar_csv(solar)?;
    let prices = load_prices_csv(prices)?;
    join_days(&aggregate_daily(&samples), &prices, true)
}

pub fn write_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut s = String::from("day,price,generation\n");
    for d in dataset.days() {
        // `{}` on f64 prints the shortest representation that round-trips
        s.push_str(&format!("{},{},{}\n", d.day, d.price, d.generation));
    }
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct DatasetRow {
    day: u32,
    price: f64,
    generation: f64,
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = open_csv(path)?;
    check_header(&mut rdr, &["day", "price", "generation"], path)?;
    let mut days = Vec::new();
    for rec in rdr.deserialize::<DatasetRow>() {
        let row = rec.map_err(|e| csv_err(e, path))?;
        days.push(DayRecord {
            day: row.day,
            price: row.price,
            generation: row.generation,
        });
    }
    Dataset::new(days, Provenance::Csv)
}

/// Test set is the last `ceil(n·fraction)` days; no shuffling.
pub fn split_chronological(dataset: &Dataset, test_fraction: f64) -> Result<(Dataset, Dataset)> {
    check_fraction(test_fraction)?;
    if dataset.is_empty() {
        return Err(Error::Validation("cannot split an empty dataset".into()));
    }
    let n = dataset.len();
    let n_test = ((n as f64 * test_fraction).ceil() as usize).min(n);
    let (train, test) = dataset.days.split_at(n - n_test);
    Ok((
        Dataset::subset(train.to_vec(), dataset.provenance.clone()),
        Dataset::subset(test.to_vec(), dataset.provenance.clone()),
    ))
}

/// Seeded uniformly random partition; both halves keep day order.
pub fn split_random(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    check_fraction(test_fraction)?;
    if dataset.is_empty() {
        return Err(Error::Validation("cannot split an empty dataset".into()));
    }
    let n = dataset.len();
    let n_test = ((n as f64 * test_fraction).ceil() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed, 0x5011_7000));
    let mut test_idx: Vec<usize> = idx[..n_test].to_vec();
    let mut train_idx: Vec<usize> = idx[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    let pick = |ix: &[usize]| ix.iter().map(|&i| dataset.days[i]).collect::<Vec<_>>();
    Ok((
        Dataset::subset(pick(&train_idx), dataset.provenance.clone()),
        Dataset::subset(pick(&test_idx), dataset.provenance.clone()),
    ))
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Config(format!("test fraction must lie in (0, 1), got {f}")));
    }
    Ok(())
}

/// Parameters of the synthetic generator.
///
/// `price(d) = price_base + price_amplitude·sin(2πd/365 + price_phase) + N(0, price_noise)`,
/// clamped to at least 0.01, and
/// `generation(d) = max(0, gen_base + gen_amplitude·sin(2πd/365 + gen_phase) + N(0, gen_noise))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub price_base: f64,
    pub price_amplitude: f64,
    pub price_noise: f64,
    pub price_phase: f64,
    pub gen_base: f64,
    pub gen_amplitude: f64,
    pub gen_noise: f64,
    pub gen_phase: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            price_base: 30.0,
            price_amplitude: 12.0,
            price_noise: 6.0,
            price_phase: std::f64::consts::FRAC_PI_2,
            gen_base: 2.0,
            gen_amplitude: 1.5,
            gen_noise: 0.4,
            gen_phase: -std::f64::consts::FRAC_PI_2 * 0.2,
        }
    }
}

pub const MIN_SYNTH_PRICE: f64 = 0.01;

pub fn synth_dataset(n_days: usize, seed: u64, params: &SynthParams) -> Result<Dataset> {
    if n_days < 10 {
        return Err(Error::Config(format!(
            "synthetic dataset needs at least 10 days, got {n_days}"
        )));
    }
    let mut rng = seeded_rng(seed, 0xDA7A);
    let noise = |sigma: f64| {
        Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::Config(format!("bad noise sigma {sigma}: {e}")))
    };
    let price_noise = noise(params.price_noise)?;
    let gen_noise = noise(params.gen_noise)?;
    let omega = 2.0 * std::f64::consts::PI / 365.0;
    let days = (0..n_days)
        .map(|d| {
            let t = omega * d as f64;
            let p = params.price_base
                + params.price_amplitude * (t + params.price_phase).sin()
                + price_noise.sample(&mut rng);
            let g = params.gen_base + params.gen_amplitude * (t + params.gen_phase).sin() + gen_noise.sample(&mut rng);
            DayRecord {
                day: d as u32,
                price: p.max(MIN_SYNTH_PRICE),
                generation: g.max(0.0),
            }
        })
        .collect();
    Dataset::new(days, Provenance::Synthetic { seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_single_solar_row() {
        let f = write_tmp("day,timestep,vmp,imp\n0,0,5.0,2.0\n");
        let s = load_solar_csv(f.path()).unwrap();
        assert_eq!(
            s,
            vec![SolarSample {
                day: 0,
                timestep: 0,
                vmp: 5.0,
                imp: 2.0
            }]
        );
    }

    #[test]
    fn header_only_solar_is_empty() {
        let f = write_tmp("day,timestep,vmp,imp\n");
        assert!(load_solar_csv(f.path()).unwrap().is_empty());
    }

    #[test]
    fn timestep_48_is_rejected() {
        let f = write_tmp("day,timestep,vmp,imp\n0,48,1,1\n");
        assert!(matches!(load_solar_csv(f.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn negative_current_and_bad_rows() {
        let f = write_tmp("day,timestep,vmp,imp\n0,0,1,-1\n");
        assert!(matches!(load_solar_csv(f.path()), Err(Error::Validation(_))));
        let f = write_tmp("day,timestep,vmp,imp\n0,0,1,1\n0,1,abc,1\n");
        match load_solar_csv(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            load_solar_csv(Path::new("/nonexistent/solar.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn full_day_aggregates_to_480() {
        let samples: Vec<_> = (0..48)
            .map(|t| SolarSample {
                day: 3,
                timestep: t,
                vmp: 5.0,
                imp: 2.0,
            })
            .collect();
        assert_eq!(aggregate_daily(&samples), vec![(3, 480.0)]);
    }

    #[test]
    fn priced_day_without_samples_has_zero_generation() {
        let ds = join_days(&[(0, 10.0)], &[(0, 2.0), (1, 3.0)], true).unwrap();
        assert_eq!(ds.days()[1].generation, 0.0);
    }

    #[test]
    fn prices_parse_and_reject_duplicates() {
        let f = write_tmp("day,price\n0,14.5\n");
        assert_eq!(load_prices_csv(f.path()).unwrap(), vec![(0, 14.5)]);
        let f = write_tmp("day,price\n0,14.5\n0,3\n");
        assert!(matches!(load_prices_csv(f.path()), Err(Error::Validation(_))));
        let f = write_tmp("day,price\n0,0\n");
        assert!(matches!(load_prices_csv(f.path()), Err(Error::Validation(_))));
        let body: String = (0..365).map(|d| format!("{d},{}\n", 10.0 + d as f64)).collect();
        let f = write_tmp(&format!("day,price\n{body}"));
        let p = load_prices_csv(f.path()).unwrap();
        assert_eq!(p.len(), 365);
        assert!(p.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn join_is_an_intersection() {
        let ds = join_days(&[(0, 1.0), (1, 2.0)], &[(1, 5.0), (2, 6.0)], false).unwrap();
        assert_eq!(ds.days().iter().map(|d| d.day).collect::<Vec<_>>(), vec![1]);
        let ds = join_days(&[(0, 1.0), (1, 2.0)], &[(0, 5.0), (1, 6.0)], false).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(join_days(&[(0, 1.0)], &[(5, 5.0)], false).is_err());
    }

    #[test]
    fn chronological_split_uses_ceiling() {
        let ds = synth_dataset(10, 1, &SynthParams::default()).unwrap();
        let (train, test) = split_chronological(&ds, 0.3).unwrap();
        assert_eq!(train.days().last().unwrap().day, 6);
        assert_eq!(test.days().iter().map(|d| d.day).collect::<Vec<_>>(), vec![7, 8, 9]);
        let ds = synth_dataset(365, 1, &SynthParams::default()).unwrap();
        assert_eq!(split_chronological(&ds, 0.3).unwrap().1.len(), 110);
        assert!(split_chronological(&ds, 1.0).is_err());
        assert!(split_chronological(&ds, 0.0).is_err());
    }

    #[test]
    fn near_one_fraction_leaves_empty_train() {
        let ds = Dataset::new(
            vec![
                DayRecord {
                    day: 0,
                    price: 1.0,
                    generation: 1.0,
                },
                DayRecord {
                    day: 1,
                    price: 1.0,
                    generation: 1.0,
                },
            ],
            Provenance::Csv,
        )
        .unwrap();
        let (train, test) = split_chronological(&ds, 0.999).unwrap();
        assert!(train.is_empty());
        assert_eq!(test.len(), 2);
    }

    #[test]
    fn random_split_partitions_and_repeats() {
        let ds = synth_dataset(100, 4, &SynthParams::default()).unwrap();
        let (a, b) = split_random(&ds, 0.5, 9).unwrap();
        let (a2, b2) = split_random(&ds, 0.5, 9).unwrap();
        assert_eq!((a.len(), b.len()), (50, 50));
        assert_eq!((&a, &b), (&a2, &b2));
        let mut all: Vec<u32> = a.days().iter().chain(b.days()).map(|d| d.day).collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn degenerate_synth_is_constant() {
        let p = SynthParams {
            price_amplitude: 0.0,
            price_noise: 0.0,
            gen_amplitude: 0.0,
            gen_noise: 0.0,
            ..SynthParams::default()
        };
        let ds = synth_dataset(30, 3, &p).unwrap();
        assert!(ds.days().iter().all(|d| d.price == 30.0 && d.generation == 2.0));
    }

    #[test]
    fn synth_is_reproducible_and_bounded() {
        let a = synth_dataset(365, 42, &SynthParams::default()).unwrap();
        let b = synth_dataset(365, 42, &SynthParams::default()).unwrap();
        assert_eq!(a, b);
        assert!(a
            .days()
            .iter()
            .all(|d| d.price >= MIN_SYNTH_PRICE && d.generation >= 0.0));
        assert!(synth_dataset(9, 42, &SynthParams::default()).is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let ds = synth_dataset(50, 8, &SynthParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.csv");
        write_dataset_csv(&ds, &path).unwrap();
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(back.days(), ds.days());
    }

    proptest! {
        #[test]
        fn aggregation_ignores_sample_order(
            raw in proptest::collection::vec((0u32..4, 0.0f64..40.0, 0.0f64..9.0), 1..60),
            seed in any::<u64>(),
        ) {
            let samples: Vec<SolarSample> = raw
                .iter()
                .enumerate()
                .map(|(i, &(day, vmp, imp))| SolarSample { day, timestep: (i % 48) as u32, vmp, imp })
                .collect();
            let mut shuffled = samples.clone();
            shuffled.shuffle(&mut seeded_rng(seed, 0));
            prop_assert_eq!(aggregate_daily(&samples), aggregate_daily(&shuffled));
        }

        #[test]
        fn chronological_split_partitions_in_order(n in 1usize..400, frac in 0.01f64..0.99) {
            let days: Vec<DayRecord> = (0..n as u32)
                .map(|day| DayRecord { day, price: 1.0, generation: 0.0 })
                .collect();
            let ds = Dataset::new(days, Provenance::Csv).unwrap();
            let (train, test) = split_chronological(&ds, frac).unwrap();
            let joined: Vec<DayRecord> = train.days().iter().chain(test.days()).copied().collect();
            prop_assert_eq!(joined.as_slice(), ds.days());
            prop_assert_eq!(test.len(), (n as f64 * frac).ceil() as usize);
        }
    }
}
