//! `qrm`: command-line frontend for the qrm toolkit.
//!
//! Exit codes: 0 success, 1 usage or bad input, 2 resource or runtime
//! failure, 3 a check or verification that ran and failed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qrm::circuit::NoiseModel;
use qrm::decoder::bsc_coset_benchmark;
use qrm::exrec::{ancilla_pool, run_exrec, AncillaPool, ExRecSpec, ExrecError, Gate, PoolConfig, PoolGenerator, PoolHeader, PoolSet};
use qrm::ft_prep::{build_protocol, check_strict_ft, count_malignant, search_schedules, CountBudget, FtError, PauliType, PermutationSchedule, SearchConstraints, Verification};
use qrm::highrate::{fold_transversal, gen_single_one, random_symplectic, synthesize, MonomialBasis, Program};
use qrm::layout::{choreography, layout2d, Replay};
use qrm::rm_codes::{divisibility_check, logical_lower_bound, min_weight_count, LogicalState, QrmCode, RmCode};
use qrm::F2Matrix;
use rand::SeedableRng;
use serde::Serialize;
use serde_json::json;

/// Half-combinations the zero-sum join gets through per second on one core.
const JOIN_RATE: f64 = 4.0e5;
/// Runs estimated above this many seconds need `--long`.
const LONG_SECONDS: f64 = 600.0;

#[derive(Parser, Debug)]
#[command(name = "qrm", version, about = "Quantum Reed-Muller code toolkit")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "QRM_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parameters, distance and weight divisibility of a code.
    CodeInfo(CodeInfoArgs),
    /// Coset-decision error rate of RM(r,m)* under bit-flip noise.
    DecodeBench(DecodeBenchArgs),
    /// Strict fault tolerance of a preparation schedule.
    FtCheck(FtCheckArgs),
    /// Exact count of malignant fault sets at one order.
    FtCount(FtCountArgs),
    /// Randomized search for fault-tolerant schedules.
    FtSearch(FtSearchArgs),
    /// Acceptance rate of a preparation protocol.
    PrepAccept(PrepAcceptArgs),
    /// Generate and store an ancilla pool.
    PoolGen(PoolGenArgs),
    /// Logical error rate of an extended rectangle.
    Exrec(ExrecArgs),
    /// Check or synthesize high-rate logical Clifford programs.
    HighrateVerify(HighrateArgs),
    /// Export the atom-movement program of a preparation.
    LayoutEmit(LayoutArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Family {
    Qrm,
    Pqrm,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Preset {
    D7,
    D15,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum StateArg {
    Zero,
    Plus,
}

impl From<StateArg> for LogicalState {
    fn from(s: StateArg) -> Self {
        match s {
            StateArg::Zero => LogicalState::Zero,
            StateArg::Plus => LogicalState::Plus,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum TypeArg {
    X,
    Z,
    Both,
}

impl TypeArg {
    fn types(self) -> Vec<PauliType> {
        match self {
            TypeArg::X => vec![PauliType::X],
            TypeArg::Z => vec![PauliType::Z],
            TypeArg::Both => vec![PauliType::X, PauliType::Z],
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct CodeArgs {
    /// Named code: d7 = PQRM(2,4,7), d15 = PQRM(3,3,7).
    #[arg(long, conflicts_with_all = ["family", "rx", "rz", "m"])]
    code: Option<Preset>,
    #[arg(long, value_enum, default_value = "pqrm")]
    family: Family,
    #[arg(long)]
    rx: Option<usize>,
    #[arg(long)]
    rz: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
}

impl CodeArgs {
    fn resolve(&self) -> Result<QrmCode, CliError> {
        let code = match (self.code, self.rx, self.rz, self.m) {
            (Some(Preset::D7), ..) => QrmCode::pqrm(2, 4, 7),
            (Some(Preset::D15), ..) => QrmCode::pqrm(3, 3, 7),
            (None, Some(rx), Some(rz), Some(m)) => match self.family {
                Family::Qrm => QrmCode::qrm(rx, rz, m),
                Family::Pqrm => QrmCode::pqrm(rx, rz, m),
            },
            _ => return Err(CliError::Usage("give --code d7|d15 or all of --rx, --rz, --m".into())),
        };
        code.map_err(|e| CliError::Usage(e.to_string()))
    }

    /// The bundled schedule for a named code.
    fn default_schedule(&self) -> Option<PermutationSchedule> {
        match self.code? {
            Preset::D7 => Some(PermutationSchedule::d7()),
            Preset::D15 => Some(PermutationSchedule::d15()),
        }
    }

    fn schedule(&self, file: &Option<PathBuf>, m: usize) -> Result<PermutationSchedule, CliError> {
        match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                PermutationSchedule::parse(&text, m).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
            }
            None => self.default_schedule().ok_or_else(|| CliError::Usage("--schedule is required for codes other than d7 and d15".into())),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct NoiseArgs {
    /// CNOT error rate; the other rates default to the standard point.
    #[arg(long)]
    p: f64,
    #[arg(long)]
    p_spam: Option<f64>,
    #[arg(long)]
    p_single: Option<f64>,
    #[arg(long)]
    p_corr: Option<f64>,
}

impl NoiseArgs {
    fn model(&self) -> Result<NoiseModel, CliError> {
        let base = NoiseModel::standard(self.p);
        let n = NoiseModel {
            p_cnot: self.p,
            p_spam: self.p_spam.unwrap_or(base.p_spam),
            p_single: self.p_single.unwrap_or(base.p_single),
            p_corr: self.p_corr.unwrap_or(base.p_corr),
        };
        n.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(n)
    }
}

#[derive(Args, Debug, Serialize)]
struct CodeInfoArgs {
    #[command(flatten)]
    code: CodeArgs,
    /// Divisibility exponent to test (default: the largest that passes).
    #[arg(long)]
    nu: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct DecodeBenchArgs {
    #[arg(long)]
    r: usize,
    #[arg(long)]
    m: usize,
    /// Bit-flip rates, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    p: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 8)]
    list: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    long: bool,
    /// CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct FtCheckArgs {
    #[command(flatten)]
    code: CodeArgs,
    /// Schedule text file (default: the bundled one for d7/d15).
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, value_enum)]
    state: StateArg,
    #[arg(long, default_value_t = 3)]
    order: usize,
    #[arg(long = "type", value_enum, default_value = "both")]
    ty: TypeArg,
    /// Check plain strict fault tolerance instead of the suppressed variant.
    #[arg(long)]
    no_suppression: bool,
    /// JSON verdict.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct FtCountArgs {
    #[command(flatten)]
    code: CodeArgs,
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, value_enum)]
    state: StateArg,
    #[arg(long)]
    order: usize,
    #[arg(long = "type", value_enum, default_value = "both")]
    ty: TypeArg,
    /// Count sets whose residual reaches the order itself, not only those exceeding it.
    #[arg(long)]
    suppression: bool,
    /// Largest number of half-combinations held per shard (about 32 bytes each).
    #[arg(long, default_value_t = 1 << 24)]
    max_shard_entries: usize,
    #[arg(long, default_value_t = 16)]
    witnesses: usize,
    /// Allow runs estimated to take more than ten minutes.
    #[arg(long)]
    long: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct FtSearchArgs {
    #[command(flatten)]
    code: CodeArgs,
    #[arg(long, value_enum)]
    state: StateArg,
    /// JSON search constraints; default: every column samples one swap per target index.
    #[arg(long)]
    constraints: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long)]
    no_suppression: bool,
    /// Candidate schedules to sample.
    #[arg(long, default_value_t = 1000)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving one schedule file per candidate.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct PrepAcceptArgs {
    #[command(flatten)]
    code: CodeArgs,
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, value_enum)]
    state: StateArg,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long, default_value_t = 100_000)]
    shots: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct PoolGenArgs {
    #[command(flatten)]
    code: CodeArgs,
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, value_enum)]
    state: StateArg,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Accepted preparations to collect.
    #[arg(long, default_value_t = 10_000)]
    target: u64,
    #[arg(long, default_value_t = 10_000_000)]
    chunk_shots: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    long: bool,
    /// Directory receiving the chunk files and manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ExrecArgs {
    /// cnot, h, s or t.
    #[arg(long)]
    gate: Gate,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pool manifests from `pool-gen`; missing types are generated in process.
    #[arg(long = "pool")]
    pools: Vec<PathBuf>,
    /// Accepted preparations per generated pool.
    #[arg(long, default_value_t = 10_000)]
    pool_target: u64,
    /// Also apply the correction noise after switching back from the T code.
    #[arg(long)]
    both_corrections_noisy: bool,
    #[arg(long)]
    long: bool,
    /// JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct HighrateArgs {
    /// Selects the code QRM(r-1, r-1, 2r), which has C(2r, r) logical qubits.
    #[arg(long)]
    r: usize,
    /// Program text to replay.
    #[arg(long)]
    program: Option<PathBuf>,
    /// Target 2k x 2k symplectic matrix, one row of 0/1 per line.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Synthesize and verify this many random targets.
    #[arg(long)]
    random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Program output for `--target`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct LayoutArgs {
    #[command(flatten)]
    code: CodeArgs,
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, value_enum)]
    state: StateArg,
    /// JSON lines, one per movement step.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Resource(String),
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Resource(_) => 2,
            CliError::Failed(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Resource(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<FtError> for CliError {
    fn from(e: FtError) -> Self {
        match e {
            FtError::Resource { .. } => CliError::Resource(e.to_string()),
            FtError::Schedule(_) | FtError::Gf2(_) | FtError::Unsupported(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ExrecError> for CliError {
    fn from(e: ExrecError) -> Self {
        match e {
            ExrecError::Mismatch(_) | ExrecError::Rm(_) | ExrecError::Ft(FtError::Schedule(_)) => CliError::Usage(e.to_string()),
            _ => CliError::Resource(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Resource(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::CodeInfo(a) => code_info(a),
        Command::DecodeBench(a) => decode_bench(a),
        Command::FtCheck(a) => ft_check(a),
        Command::FtCount(a) => ft_count(a),
        Command::FtSearch(a) => ft_search(a),
        Command::PrepAccept(a) => prep_accept(a),
        Command::PoolGen(a) => pool_gen(a),
        Command::Exrec(a) => exrec(a),
        Command::HighrateVerify(a) => highrate_verify(a),
        Command::LayoutEmit(a) => layout_emit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn workers() -> usize {
    rayon::current_num_threads()
}

/// Config header recorded with every output file.
fn config<T: Serialize>(command: &str, args: &T) -> serde_json::Value {
    json!({ "command": command, "version": env!("CARGO_PKG_VERSION"), "workers": workers(), "args": args })
}

fn write_out(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Resource(format!("{}: {e}", path.display())))
}

fn require_long(long: bool, seconds: f64, what: &str) -> Result<(), CliError> {
    eprintln!("estimated cost of {what}: {} on {} worker(s)", human_seconds(seconds), workers());
    if seconds > LONG_SECONDS && !long {
        return Err(CliError::Usage(format!("{what} is estimated at {}; pass --long to run it", human_seconds(seconds))));
    }
    Ok(())
}

fn human_seconds(s: f64) -> String {
    if s < 120.0 {
        format!("{s:.0} s")
    } else if s < 7200.0 {
        format!("{:.0} min", s / 60.0)
    } else {
        format!("{:.1} h", s / 3600.0)
    }
}

fn code_name(c: &QrmCode) -> String {
    format!("{}({},{},{})", if c.punctured { "PQRM" } else { "QRM" }, c.r_x, c.r_z, c.m)
}

fn code_info(a: &CodeInfoArgs) -> Result<(), CliError> {
    let code = a.code.resolve()?;
    let xs = code.x_stabilizers();
    let divisibility = match a.nu {
        Some(nu) => divisibility_check(&xs, nu),
        None => {
            let mut best = divisibility_check(&xs, 1);
            for nu in 2..=code.m {
                let r = divisibility_check(&xs, nu);
                if !r.pass {
                    break;
                }
                best = r;
            }
            best
        }
    };
    let min_words = |c: &RmCode| min_weight_count(c.r, c.m, c.punctured).map(|v| v.to_string()).unwrap_or_default();
    let zs = code.z_stabilizers();
    println!("{}: N={} K={} d={} (d_X={}, d_Z={})", code_name(&code), code.n(), code.k(), code.distance(), code.x_distance(), code.z_distance());
    println!(
        "divisibility nu={} {}{}",
        divisibility.nu,
        if divisibility.pass { "pass" } else { "fail" },
        divisibility.witness.as_ref().map(|w| format!(" (generators {w:?}, overlap weight {})", divisibility.witness_overlap_weight.unwrap_or(0))).unwrap_or_default()
    );
    println!("X stabilizers: dim {}, Z stabilizers: dim {}", xs.dimension(), zs.dimension());
    if let Some(path) = &a.out {
        let v = json!({
            "config": config("code-info", a),
            "code": code,
            "n": code.n(), "k": code.k(), "d": code.distance(),
            "d_x": code.x_distance(), "d_z": code.z_distance(),
            "x_stabilizer_dim": xs.dimension(), "z_stabilizer_dim": zs.dimension(),
            "x_stabilizer_min_weight_words": min_words(&xs),
            "divisibility": divisibility,
        });
        write_out(path, &(serde_json::to_string_pretty(&v).expect("json") + "\n"))?;
    }
    Ok(())
}

fn decode_bench(a: &DecodeBenchArgs) -> Result<(), CliError> {
    if a.m > 7 || a.r >= a.m || a.list == 0 {
        return Err(CliError::Usage("need r < m <= 7 and --list >= 1".into()));
    }
    if let Some(p) = a.p.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(CliError::Usage(format!("p={p} outside [0, 1]")));
    }
    // About 36 µs per trial at m = 7, L = 8; scales with 2^m L.
    let per_trial = 36e-6 * (1usize << a.m) as f64 / 128.0 * a.list as f64 / 8.0;
    require_long(a.long, per_trial * (a.trials * a.p.len() as u64) as f64 / workers() as f64, "decode-bench")?;
    let mut csv = format!("# {}\np,P_L,stderr,trials,errors,lower_bound\n", config("decode-bench", a));
    println!("RM({},{})* L={} trials={} seed={}", a.r, a.m, a.list, a.trials, a.seed);
    for &p in &a.p {
        let b = bsc_coset_benchmark(a.r, a.m, p, a.list, a.trials, a.seed);
        let bound = logical_lower_bound(p, a.r, a.m).map_err(|e| CliError::Usage(e.to_string()))?;
        println!("p={p:<8} P_L={:.4e} +- {:.2e} ({} errors)  lower bound {bound:.4e}", b.rate, b.stderr, b.errors);
        let _ = writeln!(csv, "{p},{},{},{},{},{bound}", b.rate, b.stderr, b.trials, b.errors);
    }
    if let Some(path) = &a.out {
        write_out(path, &csv)?;
    }
    Ok(())
}

fn ft_check(a: &FtCheckArgs) -> Result<(), CliError> {
    let code = a.code.resolve()?;
    let schedule = a.code.schedule(&a.schedule, code.m)?;
    let state = a.state.into();
    let protocol = build_protocol(code, state, Verification::default_for(&code, state), &schedule)?;
    let suppression = !a.no_suppression;
    let mut verdicts = Vec::new();
    let mut ok = true;
    for ty in a.ty.types() {
        let v = check_strict_ft(&protocol, ty, a.order, suppression)?;
        let counts: Vec<String> = v.orders.iter().map(|o| format!("order {}: {}", o.order, o.count)).collect();
        println!("{ty}: {} [{}]", if v.strictly_ft() { "PASS" } else { "FAIL" }, counts.join(", "));
        ok &= v.strictly_ft();
        verdicts.push(v);
    }
    println!("{} {:?} order<={} suppression={}: {}", code_name(&code), state, a.order, suppression, if ok { "PASS" } else { "FAIL" });
    if let Some(path) = &a.out {
        let v = json!({ "config": config("ft-check", a), "schedule": schedule.to_text(), "pass": ok, "verdicts": verdicts });
        write_out(path, &(serde_json::to_string_pretty(&v).expect("json") + "\n"))?;
    }
    if ok {
        Ok(())
    } else {
        Err(CliError::Failed("malignant fault sets found".into()))
    }
}

fn binomial_f64(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn ft_count(a: &FtCountArgs) -> Result<(), CliError> {
    let code = a.code.resolve()?;
    let schedule = a.code.schedule(&a.schedule, code.m)?;
    let state = a.state.into();
    let protocol = build_protocol(code, state, Verification::default_for(&code, state), &schedule)?;
    let budget = CountBudget { max_shard_entries: a.max_shard_entries, witness_limit: a.witnesses };
    let types = a.ty.types();
    let work: f64 = types
        .iter()
        .map(|&ty| binomial_f64((0..4).map(|p| protocol.universe(ty, p).len()).sum(), a.order.div_ceil(2)))
        .sum();
    require_long(a.long, work / JOIN_RATE / workers() as f64, &format!("ft-count at order {}", a.order))?;
    let mut counts = Vec::new();
    for ty in types {
        let t = Instant::now();
        let c = count_malignant(&protocol, ty, a.order, a.suppression, &budget)?;
        println!("{ty} order {}: {} malignant (split {:?}) in {:.1?}", a.order, c.total, c.by_split, t.elapsed());
        counts.push(c);
    }
    if let Some(path) = &a.out {
        let v = json!({ "config": config("ft-count", a), "schedule": schedule.to_text(), "counts": counts });
        write_out(path, &(serde_json::to_string_pretty(&v).expect("json") + "\n"))?;
    }
    Ok(())
}

fn ft_search(a: &FtSearchArgs) -> Result<(), CliError> {
    let code = a.code.resolve()?;
    let state = a.state.into();
    let constraints = match &a.constraints {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let mut c: SearchConstraints = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            c.max_order = a.order;
            c.suppression = !a.no_suppression;
            c
        }
        None => {
            let rule = qrm::ft_prep::ColumnRule { prefix: vec![], j_values: (0..code.m).collect(), fixed: None };
            SearchConstraints { columns: vec![rule; 4], max_order: a.order, suppression: !a.no_suppression }
        }
    };
    let found = search_schedules(code, state, &constraints, a.seed, a.budget)?;
    println!("{} {:?}: {} of {} samples pass order<={} (seed {})", code_name(&code), state, found.len(), a.budget, a.order, a.seed);
    for (i, s) in found.iter().enumerate() {
        println!("candidate {i}:");
        print!("{}", s.to_text());
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        let header = format!("# {}\n", config("ft-search", a));
        for (i, s) in found.iter().enumerate() {
            write_out(&dir.join(format!("schedule-{i:03}.txt")), &(header.clone() + &s.to_text()))?;
        }
    }
    Ok(())
}

fn prep_accept(a: &PrepAcceptArgs) -> Result<(), CliError> {
    let code = a.code.resolve()?;
    let schedule = a.code.schedule(&a.schedule, code.m)?;
    let noise = a.noise.model()?;
    let generator = PoolGenerator::new(PoolHeader::new(code, a.state.into(), &schedule, noise, a.seed))?;
    let (chunk, _) = generator.run(0, a.shots.div_ceil(64), false);
    let rate = chunk.accepted as f64 / chunk.shots as f64;
    let stderr = (rate * (1.0 - rate) / chunk.shots as f64).sqrt();
    println!("{} {:?}: accepted {} of {} shots, rate {:.4}% +- {:.4}%", code_name(&code), a.state, chunk.accepted, chunk.shots, 100.0 * rate, 100.0 * stderr);
    if let Some(path) = &a.out {
        let v = json!({ "config": config("prep-accept", a), "noise": noise, "shots": chunk.shots, "accepted": chunk.accepted, "rate": rate, "stderr": stderr });
        write_out(path, &(serde_json::to_string_pretty(&v).expect("json") + "\n"))?;
    }
    Ok(())
}

/// Seconds per shot of one preparation, measured on a short run.
fn calibrate_prep(header: &PoolHeader) -> Result<(f64, f64), CliError> {
    let generator = PoolGenerator::new(header.clone())?;
    let t = Instant::now();
    let (chunk, _) = generator.run(1 << 40, 64, false);
    Ok((t.elapsed().as_secs_f64() / chunk.shots as f64, (chunk.accepted.max(1)) as f64 / chunk.shots as f64))
}

fn pool_gen(a: &PoolGenArgs) -> Result<(), CliError> {
    let code = a.code.resolve()?;
    let schedule = a.code.schedule(&a.schedule, code.m)?;
    let noise = a.noise.model()?;
    let header = PoolHeader::new(code, a.state.into(), &schedule, noise, a.seed);
    let (per_shot, rate) = calibrate_prep(&header)?;
    require_long(a.long, per_shot * a.target as f64 / rate, "pool-gen")?;
    let cfg = PoolConfig { target_accepted: a.target, chunk_shots: a.chunk_shots, out_dir: Some(a.out.clone()), ..Default::default() };
    let (pool, rate) = ancilla_pool(header, &cfg)?;
    write_out(&a.out.join("config.json"), &(serde_json::to_string_pretty(&config("pool-gen", a)).expect("json") + "\n"))?;
    println!("{} {:?}: {} accepted of {} shots ({:.4}%), written to {}", code_name(&code), a.state, pool.accepted, pool.shots, 100.0 * rate, a.out.display());
    Ok(())
}

fn exrec(a: &ExrecArgs) -> Result<(), CliError> {
    let noise = a.noise.model()?;
    let mut spec = ExRecSpec::new(a.gate, noise);
    spec.both_corrections_noisy = a.both_corrections_noisy;
    let mut set = PoolSet::default();
    for path in &a.pools {
        set.pools.push(AncillaPool::load(&path.join("manifest.json")).or_else(|_| AncillaPool::load(path))?);
    }
    let missing: Vec<(QrmCode, LogicalState)> = spec.ancilla_types().into_iter().filter(|(c, s)| set.get(c, *s).is_err()).collect();
    let schedule_for = |c: &QrmCode| if *c == spec.t_code { PermutationSchedule::d7() } else { PermutationSchedule::d15() };
    let mut estimate = 0.0;
    for (i, (c, s)) in missing.iter().enumerate() {
        let (per_shot, rate) = calibrate_prep(&PoolHeader::new(*c, *s, &schedule_for(c), noise, a.seed.wrapping_add(i as u64 + 1)))?;
        estimate += per_shot * a.pool_target as f64 / rate;
    }
    // A trial costs about one 36 µs decoder call per trailing block.
    let decodes = if a.gate == Gate::Cnot { 8.0 } else { 4.0 };
    estimate += a.trials as f64 * decodes * 36e-6 / workers() as f64;
    require_long(a.long, estimate, "exrec")?;
    for (i, (c, s)) in missing.into_iter().enumerate() {
        let header = PoolHeader::new(c, s, &schedule_for(&c), noise, a.seed.wrapping_add(i as u64 + 1));
        let (pool, rate) = ancilla_pool(header, &PoolConfig { target_accepted: a.pool_target, ..Default::default() })?;
        eprintln!("pool {} {:?}: {} accepted, rate {:.4}%", code_name(&c), s, pool.accepted, 100.0 * rate);
        set.pools.push(pool);
    }
    let t = Instant::now();
    let r = run_exrec(&spec, &set, a.trials, a.seed)?;
    println!("{} exRec at p={} ({} trials, seed {}, {:.1?})", a.gate, a.noise.p, r.trials, r.seed, t.elapsed());
    for c in &r.classes {
        println!("  {:<3} {:>8} errors  rate {:.3e}  95% CI [{:.3e}, {:.3e}]", c.class, c.errors, c.rate, c.ci.0, c.ci.1);
    }
    println!("  any {:>8} errors  rate {:.3e}  95% CI [{:.3e}, {:.3e}]", r.failures, r.rate, r.ci.0, r.ci.1);
    if let Some(path) = &a.out {
        let pools: Vec<_> = set.pools.iter().map(|p| json!({ "code": p.header.code, "state": p.header.state, "seed": p.header.seed, "shots": p.shots, "accepted": p.accepted })).collect();
        let header = json!({ "config": config("exrec", a), "noise": noise, "pools": pools });
        write_out(path, &(header.to_string() + "\n" + &r.to_json_lines()))?;
    }
    Ok(())
}

fn read_matrix(path: &Path) -> Result<F2Matrix, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let rows: Vec<String> = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").chars().filter(|c| !c.is_whitespace()).collect::<String>())
        .filter(|l| !l.is_empty())
        .collect();
    let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
    F2Matrix::parse_rows(&refs).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn highrate_verify(a: &HighrateArgs) -> Result<(), CliError> {
    let basis = MonomialBasis::new(a.r).map_err(|e| CliError::Usage(e.to_string()))?;
    let k = basis.k();
    let program = match &a.program {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            Some(Program::parse(&text, a.r).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    let target = a.target.as_deref().map(read_matrix).transpose()?;
    if let Some(t) = &target {
        if t.rows() != 2 * k || t.cols() != 2 * k {
            return Err(CliError::Usage(format!("target must be {0}x{0}, got {1}x{2}", 2 * k, t.rows(), t.cols())));
        }
    }
    let mut failures = Vec::new();
    match (&program, &target) {
        (Some(p), Some(t)) => {
            let ok = p.data_action(&basis).as_ref() == Some(t);
            println!("program of {} gates {} the target", p.len(), if ok { "implements" } else { "does NOT implement" });
            if !ok {
                failures.push("program action differs from the target".to_string());
            }
        }
        (Some(p), None) => match p.data_action(&basis) {
            Some(m) => {
                println!("program of {} gates acts on the data block as:", p.len());
                for row in m.to_row_strings() {
                    println!("{row}");
                }
            }
            None => failures.push("program entangles the data block with the ancilla block".into()),
        },
        (None, Some(t)) => {
            let p = synthesize(t, &basis).map_err(|e| CliError::Failed(e.to_string()))?;
            println!("synthesized and verified a program of {} gates", p.len());
            match &a.out {
                Some(path) => write_out(path, &p.to_string())?,
                None => print!("{p}"),
            }
        }
        (None, None) if a.random.is_none() => {
            let (expr, _, m) = gen_single_one(&basis);
            let single = m.weight() == 1;
            println!("single-one generator: {expr} -> weight {} {}", m.weight(), if single { "ok" } else { "FAIL" });
            if !single {
                failures.push("single-one generator".into());
            }
            let fold = fold_transversal(&basis);
            println!("fold-transversal phases: {}", if fold.phases_ok() { "ok" } else { "FAIL" });
            if !fold.phases_ok() {
                failures.push("fold-transversal phases".into());
            }
        }
        (None, None) => {}
    }
    if let Some(n) = a.random {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
        let mut gates = 0;
        for i in 0..n {
            let t = random_symplectic(k, &mut rng);
            match synthesize(&t, &basis) {
                Ok(p) => gates += p.len(),
                Err(e) => failures.push(format!("random target {i}: {e}")),
            }
        }
        println!("{} of {n} random targets synthesized and verified (seed {}, {} gates in total)", n - failures.len().min(n), a.seed, gates);
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(failures.join("; ")))
    }
}

fn layout_emit(a: &LayoutArgs) -> Result<(), CliError> {
    let code = a.code.resolve()?;
    let schedule = a.code.schedule(&a.schedule, code.m)?;
    let steps = choreography(&schedule, &code, a.state.into()).map_err(|e| CliError::Usage(e.to_string()))?;
    let grid = layout2d(code.m).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut per_patch: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for s in &steps {
        let e = per_patch.entry(s.patch).or_default();
        e.0 += 1;
        e.1 += s.regions.len();
    }
    println!("{} {:?} on a {}x{} grid", code_name(&code), a.state, grid.rows, grid.cols);
    for (patch, (n, regions)) in &per_patch {
        println!("patch {patch}: {n} steps, {regions} regions");
    }
    for p in 0..schedule.columns.len() {
        let own: Vec<_> = steps.iter().filter(|s| s.patch == p).cloned().collect();
        let map = Replay::run(&grid, &own).map_err(|e| CliError::Failed(format!("patch {p}: {e}")))?;
        if map != schedule.label_map(p) {
            return Err(CliError::Failed(format!("patch {p}: replay differs from the schedule's permutation")));
        }
    }
    println!("replay matches the schedule permutation for every patch");
    let lines: String = steps.iter().map(|s| serde_json::to_string(s).expect("json") + "\n").collect();
    match &a.out {
        Some(path) => write_out(path, &lines)?,
        None => print!("{lines}"),
    }
    Ok(())
}
