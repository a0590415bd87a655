//! Toy niche-modelling setup step used by the end-to-end fixture.
//!
//! Reads `data/occurrences.csv`, drops duplicate records, assigns each record
//! to one of four cross-validation folds with a seeded generator, and writes
//! `out/sdmdata.txt`. The fold sampler follows the `enmsample` version pinned
//! in `repro.lock`: before 3.6 it uses the old rounding sampler, from 3.6 the
//! rejection sampler. The same seed therefore gives different folds across
//! that version boundary, which is the drift the fixture exercises.
//!
//! With `--version` it impersonates an R interpreter so environment probing
//! has something to read.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use repro_core::config::ProjectConfig;
use repro_core::model::Language;
use repro_core::scan::lockfile::LOCKFILE_NAME;
use repro_core::scan::{read_lockfile, LockfileFormat};

const INPUT: &str = "data/occurrences.csv";
const OUTPUT: &str = "out/sdmdata.txt";
const FOLDS: u32 = 4;
const R_VERSION: &str = "3.6.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sampler {
    Rounding,
    Rejection,
}

impl Sampler {
    fn for_version(version: &str) -> Result<Sampler, String> {
        let mut parts = version.split('.').map(|p| p.parse::<u32>());
        match (parts.next(), parts.next()) {
            (Some(Ok(major)), Some(Ok(minor))) => Ok(if (major, minor) < (3, 6) {
                Sampler::Rounding
            } else {
                Sampler::Rejection
            }),
            _ => Err(format!("enmsample version {version:?} is not MAJOR.MINOR[.PATCH]")),
        }
    }

    fn fold(self, rng: &mut ChaCha8Rng) -> u32 {
        match self {
            Sampler::Rounding => {
                let u: f64 = rng.gen();
                (u * f64::from(FOLDS)).round() as u32 % FOLDS
            }
            Sampler::Rejection => rng.gen_range(0..FOLDS),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Sampler::Rounding => "rounding",
            Sampler::Rejection => "rejection",
        }
    }
}

fn seed(args: &[String]) -> Result<u64, String> {
    if let Some(i) = args.iter().position(|a| a == "--seed") {
        let v = args.get(i + 1).ok_or("--seed needs a value")?;
        return v.parse().map_err(|_| format!("seed {v:?} is not an integer"));
    }
    let config = ProjectConfig::load(Path::new("."))
        .map_err(|e| e.to_string())?
        .unwrap_or_default();
    let p = config
        .parameters
        .iter()
        .find(|p| p.name == "seed")
        .ok_or("no seed: pass --seed or set parameters.seed in repro.toml")?;
    p.value.parse().map_err(|_| format!("seed {:?} is not an integer", p.value))
}

fn sampler() -> Result<Sampler, String> {
    let text = fs::read_to_string(LOCKFILE_NAME).map_err(|e| format!("{LOCKFILE_NAME}: {e}"))?;
    let pins = read_lockfile(&text, LockfileFormat::Canonical).map_err(|e| format!("{LOCKFILE_NAME}: {e}"))?;
    let pin = pins
        .iter()
        .find(|p| p.ecosystem == Language::R && p.name == "enmsample")
        .ok_or("enmsample is not pinned in repro.lock")?;
    Sampler::for_version(&pin.version)
}

fn run(args: &[String]) -> Result<(), String> {
    let seed = seed(args)?;
    let sampler = sampler()?;
    let csv = fs::read_to_string(INPUT).map_err(|e| format!("{INPUT}: {e}"))?;
    let mut lines = csv.lines();
    let header = lines.next().ok_or("occurrence file is empty")?.trim();
    if header != "species,lon,lat" {
        return Err(format!("unexpected header {header:?}"));
    }
    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    let mut total = 0;
    for (n, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [species, lon, lat] = fields[..] else {
            return Err(format!("line {}: expected 3 fields", n + 2));
        };
        let lon: f64 = lon.parse().map_err(|_| format!("line {}: bad longitude", n + 2))?;
        let lat: f64 = lat.parse().map_err(|_| format!("line {}: bad latitude", n + 2))?;
        total += 1;
        // Duplicates compare on the parsed coordinates, not the text.
        if seen.insert((species.to_owned(), lon.to_bits(), lat.to_bits())) {
            records.push((species.to_owned(), lon, lat));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# seed {seed}, sampler {}, {} unique of {total} records",
        sampler.name(),
        records.len()
    );
    let _ = writeln!(out, "species\tlon\tlat\tfold");
    for (species, lon, lat) in &records {
        let _ = writeln!(out, "{species}\t{lon:.4}\t{lat:.4}\t{}", sampler.fold(&mut rng) + 1);
    }
    fs::create_dir_all("out").map_err(|e| format!("out: {e}"))?;
    fs::write(OUTPUT, out).map_err(|e| format!("{OUTPUT}: {e}"))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--version") {
        println!("R version {R_VERSION} (toy interpreter)");
        return ExitCode::SUCCESS;
    }
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("repro-toy-enm: {e}");
            ExitCode::from(1)
        }
    }
}
