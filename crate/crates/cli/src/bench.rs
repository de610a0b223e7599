//! Benchmark instance sets: files on disk or generated on the fly, plus
//! reference tables.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bopo_core::env::fjsp::Flavor;
use bopo_core::rng::stream;
use bopo_core::trainer::{Instance, Problem, Shape};

use crate::table::{parse_num, Table};
use crate::usage;

/// Files with these extensions inside a benchmark directory are not instances.
const SKIPPED_EXTENSIONS: [&str; 4] = ["csv", "md", "json", "svg"];

#[derive(Debug, Clone)]
pub struct Named {
    pub name: String,
    pub instance: Instance,
}

#[derive(clap::Args, Debug, Clone)]
pub struct SourceOpts {
    /// jsp, tsp or fjsp.
    #[arg(long)]
    pub problem: Option<Problem>,
    /// Instance file, directory of instance files, or `generated`.
    #[arg(long)]
    pub benchmark: String,
    /// Shape of generated instances.
    #[arg(long)]
    pub shape: Option<Shape>,
    /// Number of generated instances.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Seed of generated instances.
    #[arg(long, default_value_t = 1)]
    pub instance_seed: u64,
    /// Candidate distribution of generated flexible instances.
    #[arg(long, default_value_t = Flavor::RData)]
    pub flavor: Flavor,
}

impl SourceOpts {
    pub fn is_generated(&self) -> bool {
        self.benchmark == "generated"
    }

    pub fn load(&self, problem: Problem) -> Result<Vec<Named>> {
        if self.is_generated() {
            let shape = self.shape.unwrap_or_else(|| default_shape(problem));
            if let Err(e) = shape.check(problem) {
                return usage(e.to_string());
            }
            return generate(problem, shape, self.count, self.instance_seed, self.flavor);
        }
        if self.shape.is_some() {
            return usage("--shape applies to generated benchmarks only");
        }
        load_path(problem, Path::new(&self.benchmark))
    }
}

pub fn default_shape(problem: Problem) -> Shape {
    match problem {
        Problem::Tsp => Shape::nodes(20),
        Problem::Jsp => Shape::grid(8, 8),
        Problem::Fjsp => Shape::grid(10, 5),
    }
}

fn extension(problem: Problem) -> &'static str {
    match problem {
        Problem::Tsp => "tsp",
        Problem::Jsp => "txt",
        Problem::Fjsp => "fjs",
    }
}

/// Random instances drawn from per-instance streams, so any prefix of a
/// larger set is the smaller set.
pub fn generate(problem: Problem, shape: Shape, count: usize, seed: u64, flavor: Flavor) -> Result<Vec<Named>> {
    if count == 0 {
        return usage("--count must be at least 1");
    }
    (0..count)
        .map(|i| {
            let mut rng = stream(seed, &[0, i as u64]);
            Ok(Named {
                name: format!("{problem}{shape}_{i:03}"),
                instance: Instance::generate(problem, shape, flavor, &mut rng)?,
            })
        })
        .collect()
}

/// One file, or every instance file of a directory in name order; the
/// instance name is the file stem.
pub fn load_path(problem: Problem, path: &Path) -> Result<Vec<Named>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut files = Vec::new();
        for entry in fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
            let p = entry?.path();
            let hidden = p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'));
            let skipped = p
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| SKIPPED_EXTENSIONS.contains(&e));
            if p.is_file() && !hidden && !skipped {
                files.push(p);
            }
        }
        files.sort();
        files
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        bail!("benchmark {} does not exist", path.display());
    };
    if files.is_empty() {
        bail!("no instance files in {}", path.display());
    }
    files
        .iter()
        .map(|f| {
            let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
            let instance = Instance::parse(problem, &text).with_context(|| format!("parsing {}", f.display()))?;
            let name = f.file_stem().and_then(|s| s.to_str()).unwrap_or("instance").to_string();
            Ok(Named { name, instance })
        })
        .collect()
}

/// Reference objectives keyed by instance name from a `name,optimum` table.
pub fn load_refs(path: &Path) -> Result<HashMap<String, f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading reference file {}", path.display()))?;
    let table = Table::parse(&text).with_context(|| format!("parsing reference file {}", path.display()))?;
    let names = table.values("name")?;
    let values = table.values("optimum")?;
    let mut refs = HashMap::new();
    for (name, value) in names.into_iter().zip(values) {
        let Some(v) = parse_num(value).with_context(|| format!("reference of {name}"))? else {
            continue;
        };
        if refs.insert(name.to_string(), v).is_some() {
            bail!("reference file {} lists {name} twice", path.display());
        }
    }
    Ok(refs)
}

#[derive(clap::Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub problem: Problem,
    #[arg(long)]
    pub shape: Option<Shape>,
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = Flavor::RData)]
    pub flavor: Flavor,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_generate(args: GenerateArgs) -> Result<()> {
    let shape = args.shape.unwrap_or_else(|| default_shape(args.problem));
    if let Err(e) = shape.check(args.problem) {
        return usage(e.to_string());
    }
    let set = generate(args.problem, shape, args.count, args.seed, args.flavor)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for n in &set {
        let path = args.out.join(format!("{}.{}", n.name, extension(args.problem)));
        fs::write(&path, n.instance.to_text(&n.name)).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote {} instances to {}", set.len(), args.out.display());
    Ok(())
}
