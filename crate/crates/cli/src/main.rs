use std::error::Error;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use xlmimo::channel::{rayleigh_distance, wavelength};
use xlmimo::io;
use xlmimo::linksim::{self, Scenario, Setup, SweepAxis};
use xlmimo::metrics;
use xlmimo::mimo::Scheme;

type CliResult = Result<(), Box<dyn Error>>;

#[derive(Parser)]
#[command(
    name = "xlmimo",
    version,
    about = "Link-level XL-MIMO TDD OFDM simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Uplink detection over the scenario's slots.
    SimulateUl(Common),
    /// Reciprocity-based downlink precoding and user-side equalization.
    SimulateDl(Common),
    /// Uplink runs over one parameter axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// snr, k, n, scheme or p
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. `0,5,10`.
        #[arg(
            long,
            value_delimiter = ',',
            required = true,
            allow_hyphen_values = true
        )]
        values: Vec<String>,
    },
    /// Singular-value spread and per-element power of the scenario channel.
    AnalyzeChannel(Common),
    /// Fronthaul sample rates and throughput.
    Rates(Common),
    /// PSS detection Monte-Carlo.
    SyncTest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        /// PSS sample power over noise variance in dB.
        #[arg(long, allow_hyphen_values = true)]
        snr_db: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML scenario file; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for JSON, CSV and binary outputs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of processors of the distributed baseband.
    #[arg(long, value_name = "P")]
    distributed: Option<usize>,
    #[arg(long, value_parser = PossibleValuesParser::new(["mr", "zf", "lmmse"]))]
    scheme: Option<String>,
}

impl Common {
    fn scenario(&self) -> Result<Scenario, Box<dyn Error>> {
        let mut s = match &self.config {
            Some(path) => Scenario::from_file(path)?,
            None => Scenario::default(),
        };
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(p) = self.distributed {
            s.processors = p;
        }
        if let Some(scheme) = &self.scheme {
            s.scheme = scheme.parse::<Scheme>()?;
        }
        Ok(s)
    }

    fn out_dir(&self) -> Result<Option<&Path>, Box<dyn Error>> {
        match &self.out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Ok(Some(dir))
            }
            None => Ok(None),
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> CliResult {
    let mut out = std::io::stdout().lock();
    let written = serde_json::to_writer_pretty(&mut out, value)
        .map_err(std::io::Error::from)
        .and_then(|()| writeln!(out));
    match written {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

#[derive(Serialize)]
struct ProfileRow {
    user: usize,
    element: usize,
    power: f64,
    power_db: f64,
}

#[derive(Serialize)]
struct ChannelSummary {
    subcarriers: usize,
    elements: usize,
    users: usize,
    carrier_hz: f64,
    aperture_m: f64,
    rayleigh_distance_m: f64,
    user_power: Vec<f64>,
    median_spread: f64,
    spread_p10: f64,
    spread_p90: f64,
    unbounded_spread: usize,
    /// Elements of each user within 3 dB of its strongest element.
    visible_elements: Vec<usize>,
}

fn simulate_ul(c: &Common) -> CliResult {
    let setup = Setup::new(&c.scenario()?)?;
    let run = linksim::run_uplink_with(&setup)?;
    if let Some(dir) = c.out_dir()? {
        io::save_json(&dir.join("summary.json"), &run.report)?;
        io::save_csv(&dir.join("users.csv"), &run.report.per_user)?;
        io::save_csv(&dir.join("links.csv"), &run.report.link_usage)?;
        io::save_tensor(&dir.join("channel.xlmt"), &setup.channel)?;
    }
    print_json(&run.report)
}

fn simulate_dl(c: &Common) -> CliResult {
    let setup = Setup::new(&c.scenario()?)?;
    let run = linksim::run_downlink_with(&setup)?;
    if let Some(dir) = c.out_dir()? {
        io::save_json(&dir.join("summary.json"), &run.report)?;
        io::save_csv(&dir.join("users.csv"), &run.report.per_user)?;
        io::save_csv(&dir.join("links.csv"), &run.report.link_usage)?;
        io::save_tensor(&dir.join("channel.xlmt"), &setup.channel)?;
    }
    print_json(&run.report)
}

fn sweep(c: &Common, axis: &str, values: &[String]) -> CliResult {
    let axis: SweepAxis = axis.parse()?;
    let rows = linksim::run_sweep(&c.scenario()?, axis, values)?;
    if let Some(dir) = c.out_dir()? {
        io::save_json(&dir.join("summary.json"), &rows)?;
        io::save_csv(&dir.join("sweep.csv"), &rows)?;
    }
    print_json(&rows)
}

fn analyze_channel(c: &Common) -> CliResult {
    let scenario = c.scenario()?;
    let setup = Setup::new(&scenario)?;
    let spread = metrics::singular_value_spread(&setup.channel, true)?;
    let mut profile = Vec::new();
    let mut visible = Vec::new();
    for user in 0..setup.n_users() {
        let p = metrics::element_power_profile(&setup.channel, user)?;
        let db = metrics::profile_db(&p);
        visible.push(db.iter().filter(|v| **v >= -3.0).count());
        profile.extend(
            p.iter()
                .zip(&db)
                .enumerate()
                .map(|(element, (power, power_db))| ProfileRow {
                    user,
                    element,
                    power: *power,
                    power_db: *power_db,
                }),
        );
    }
    let aperture = setup.geometry.aperture();
    let summary = ChannelSummary {
        subcarriers: setup.n_sc(),
        elements: setup.n_elements(),
        users: setup.n_users(),
        carrier_hz: scenario.carrier_hz,
        aperture_m: aperture,
        rayleigh_distance_m: rayleigh_distance(aperture, wavelength(scenario.carrier_hz)),
        user_power: setup.channel.user_power(),
        median_spread: spread.median(),
        spread_p10: spread.quantile(0.1),
        spread_p90: spread.quantile(0.9),
        unbounded_spread: spread.unbounded,
        visible_elements: visible,
    };
    if let Some(dir) = c.out_dir()? {
        io::save_json(&dir.join("summary.json"), &summary)?;
        spread.write_csv(BufWriter::new(File::create(dir.join("spread.csv"))?))?;
        io::save_csv(&dir.join("profile.csv"), &profile)?;
        io::save_tensor(&dir.join("channel.xlmt"), &setup.channel)?;
    }
    print_json(&summary)
}

fn rates(c: &Common) -> CliResult {
    let summary = linksim::rate_summary(&c.scenario()?)?;
    if let Some(dir) = c.out_dir()? {
        io::save_json(&dir.join("summary.json"), &summary)?;
    }
    print_json(&summary)
}

fn sync_test(c: &Common, trials: Option<usize>, snr_db: Option<f64>) -> CliResult {
    let mut scenario = c.scenario()?;
    if let Some(t) = trials {
        scenario.sync.trials = t;
    }
    if snr_db.is_some() {
        scenario.sync.snr_db = snr_db;
    }
    let report = linksim::run_sync_test(&scenario)?;
    if let Some(dir) = c.out_dir()? {
        io::save_json(&dir.join("summary.json"), &report)?;
        io::save_csv(&dir.join("trials.csv"), &report.trials_detail)?;
    }
    print_json(&linksim::SyncReport {
        trials_detail: Vec::new(),
        ..report
    })
}

fn run(cli: Cli) -> CliResult {
    match &cli.command {
        Command::SimulateUl(c) => simulate_ul(c),
        Command::SimulateDl(c) => simulate_dl(c),
        Command::Sweep {
            common,
            axis,
            values,
        } => sweep(common, axis, values),
        Command::AnalyzeChannel(c) => analyze_channel(c),
        Command::Rates(c) => rates(c),
        Command::SyncTest {
            common,
            trials,
            snr_db,
        } => sync_test(common, *trials, *snr_db),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
