// SPDX-License-Identifier: Apache-2.0

//! `fixynn`: build, compress, freeze, simulate, emit and cost fixed-weight
//! feature extractors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fixynn_core::compress::{
    compress_model, load_frozen, save_frozen, CompressOptions, FrozenModel,
};
use fixynn_core::dse::{self, Preset};
use fixynn_core::model::io::{load_bundle, save_bundle, Manifest};
use fixynn_core::model::{
    build_mobilenet, count_macs, count_params, fixed_ops_fraction, Graph, ModelBundle,
};
use fixynn_core::netlist::{freeze, pipeline_stats, FreezeSpec, Netlist};
use fixynn_core::ppa::{netlist_ppa, nvdla_point, system_ppa, CostConfig, NvdlaTable};
use fixynn_core::rtl::{emit_testbench, emit_verilog};
use fixynn_core::sim::{check_equivalence, simulate};
use fixynn_core::tensor::{ActivationTensor, TensorFile};
use fixynn_core::{exec, Error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const COST_ENV: &str = "FIXYNN_COST_CONFIG";

#[derive(Parser, Debug)]
#[command(
    name = "fixynn",
    version,
    about = "Fixed-weight feature extractor toolchain"
)]
struct Cli {
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    json: bool,
    /// More logging (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Inspect or create model manifests.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Create tensor files.
    #[command(subcommand)]
    Tensor(TensorCmd),
    /// Prune, quantize and calibrate a float model into a frozen model.
    Compress(CompressArgs),
    /// Run the integer reference executor.
    Run(RunArgs),
    /// Lower a prefix of a frozen model into a netlist.
    Freeze(FreezeArgs),
    /// Simulate a netlist, optionally checking it against its model.
    Sim(SimArgs),
    /// Write Verilog and a self-checking testbench.
    EmitRtl(EmitRtlArgs),
    /// Power, performance and area of a netlist.
    Ppa(PpaArgs),
    /// Sweep split depth and area budget.
    Dse(DseArgs),
}

#[derive(Subcommand, Debug)]
enum ModelCmd {
    /// MAC and parameter counts per layer.
    Info { manifest: PathBuf },
    /// Write a MobileNet v1 manifest with seeded synthetic weights.
    Init {
        #[arg(long, default_value_t = 0.25)]
        width: f64,
        #[arg(long, default_value_t = 224)]
        resolution: usize,
        #[arg(long, default_value_t = 1000)]
        classes: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write only the manifest, without weights.
        #[arg(long)]
        no_weights: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum TensorCmd {
    /// Uniform random int8 tensor.
    Random {
        /// HWC or NHWC dims, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        shape: Vec<usize>,
        #[arg(long, default_value_t = -7, allow_hyphen_values = true)]
        exponent: i32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Args, Debug)]
struct CompressArgs {
    model: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    sparsity: f64,
    #[arg(long, default_value_t = 8)]
    bits: u32,
    /// Calibration images; without it one seeded random image is used.
    #[arg(long)]
    calib: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Report every prefix-unit boundary.
    #[arg(long)]
    dump_taps: bool,
    /// Write logits (and taps) as tensor files here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FreezeArgs {
    model: PathBuf,
    /// Number of prefix units baked into hardware.
    #[arg(short = 'N', long = "n-fixed")]
    n_fixed: usize,
    /// Expose an early-exit port after this unit (repeatable).
    #[arg(long = "tap")]
    taps: Vec<usize>,
    /// Make BN registers writable.
    #[arg(long)]
    adaptive_bn: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct SimArgs {
    netlist: PathBuf,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Write the output stream as a tensor file.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    check_against: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EmitRtlArgs {
    netlist: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 100)]
    tb_vectors: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args, Debug)]
struct CostArgs {
    /// Cost constants (TOML or JSON); defaults to $FIXYNN_COST_CONFIG.
    #[arg(long)]
    cost: Option<PathBuf>,
    /// Replacement back-end configuration table (TOML or JSON).
    #[arg(long)]
    nvdla: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PpaArgs {
    netlist: PathBuf,
    #[command(flatten)]
    cost: CostArgs,
    /// Compose with a back end under this total area budget (mm²).
    #[arg(long, requires = "model")]
    budget: Option<f64>,
    /// Manifest of the model the netlist came from (for the fixed-ops fraction).
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DseArgs {
    /// Frozen model; defaults to a seeded 50%-sparse MobileNet-0.25 at 224.
    model: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// `a:b:step` or a comma list, mm².
    #[arg(long)]
    budgets: Option<String>,
    #[arg(long)]
    splits: Option<String>,
    #[command(flatten)]
    cost: CostArgs,
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Directory for the scatter plots.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Report only the Pareto frontier.
    #[arg(long)]
    pareto: bool,
}

fn emit(json: bool, value: serde_json::Value, text: impl FnOnce() -> String) {
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&value).expect("serializable")
        );
    } else {
        print!("{}", text());
    }
}

fn load_cost(args: &CostArgs) -> Result<(CostConfig, NvdlaTable)> {
    let path = args
        .cost
        .clone()
        .or_else(|| std::env::var_os(COST_ENV).map(PathBuf::from));
    let cost = match path {
        Some(p) => {
            CostConfig::read(&p).with_context(|| format!("loading cost config {}", p.display()))?
        }
        None => CostConfig::default(),
    };
    let table = match &args.nvdla {
        Some(p) => NvdlaTable::read(p)?,
        None => NvdlaTable::default(),
    };
    Ok((cost, table))
}

fn read_graph(path: &Path) -> Result<Graph> {
    Ok(Manifest::read(path)?.graph()?)
}

fn model_info(json: bool, path: &Path) -> Result<()> {
    let graph = read_graph(path)?;
    let macs = count_macs(&graph);
    let params = count_params(&graph);
    let value = json!({
        "layers": graph.layers().iter().enumerate().map(|(i, l)| json!({
            "index": i,
            "kind": l.kind,
            "output": graph.output_of(i),
            "macs": macs.per_layer[i],
            "params": params.per_layer[i],
        })).collect::<Vec<_>>(),
        "prefix_units": graph.num_prefix_units(),
        "total_macs": macs.total,
        "total_params": params.total,
        "bn_params": params.bn_total,
    });
    emit(json, value, || {
        let mut s = format!(
            "{:>5}  {:<16} {:>15} {:>12} {:>10}\n",
            "layer", "kind", "output", "MACs", "params"
        );
        for (i, l) in graph.layers().iter().enumerate() {
            let o = graph.output_of(i);
            s += &format!(
                "{:>5}  {:<16} {:>15} {:>12} {:>10}\n",
                i,
                format!("{:?}", l.kind),
                format!("{}x{}x{}", o.height, o.width, o.channels),
                macs.per_layer[i],
                params.per_layer[i]
            );
        }
        s += &format!(
            "total: {} MACs ({:.2} M), {} params ({:.3} M), {} prefix units\n",
            macs.total,
            macs.total as f64 / 1e6,
            params.total,
            params.total as f64 / 1e6,
            graph.num_prefix_units()
        );
        s
    });
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn model_init(
    json: bool,
    width: f64,
    resolution: usize,
    classes: usize,
    seed: u64,
    no_weights: bool,
    output: &Path,
) -> Result<()> {
    let graph = build_mobilenet(width, resolution, classes)?;
    if no_weights {
        Manifest::for_graph(&graph).write(output)?;
    } else {
        save_bundle(&ModelBundle::synthetic(graph.clone(), seed), output)?;
    }
    emit(
        json,
        json!({"manifest": output, "layers": graph.layers().len(), "weights": !no_weights}),
        || {
            format!(
                "wrote {} ({} layers)\n",
                output.display(),
                graph.layers().len()
            )
        },
    );
    Ok(())
}

fn read_images(path: &Path) -> Result<Vec<ActivationTensor>> {
    Ok(TensorFile::read(path)?.into_images()?)
}

fn compress(json: bool, a: &CompressArgs) -> Result<()> {
    let bundle = load_bundle(&a.model)?;
    let calib = match &a.calib {
        Some(p) => read_images(p)?,
        None => {
            let s = bundle.graph.input_shape();
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            vec![ActivationTensor::random(
                &mut rng, s.height, s.width, s.channels, -7,
            )]
        }
    };
    let opts = CompressOptions {
        sparsity: a.sparsity,
        bits: a.bits,
        ..Default::default()
    };
    let model = compress_model(&bundle, &opts, &calib)?;
    save_frozen(&model, &a.output)?;
    let nonzero: usize = model
        .layers
        .iter()
        .filter_map(|l| l.weights.as_ref())
        .map(|w| w.nonzero())
        .sum();
    emit(
        json,
        json!({
            "output": a.output,
            "sparsity": model.sparsity,
            "bits": model.bits,
            "input_exponent": model.input_exponent,
            "nonzero_weights": nonzero,
        }),
        || {
            format!(
                "wrote {}: {} nonzero weights, sparsity {}, {} bits, input exponent {}\n",
                a.output.display(),
                nonzero,
                model.sparsity,
                model.bits,
                model.input_exponent
            )
        },
    );
    Ok(())
}

fn tensor_summary(t: &ActivationTensor) -> serde_json::Value {
    let sum: i64 = t.values.iter().map(|&v| v as i64).sum();
    json!({
        "dims": t.dims(),
        "exponent": t.scale_exponent,
        "sum": sum,
        "min": t.values.iter().min(),
        "max": t.values.iter().max(),
    })
}

fn run(json: bool, a: &RunArgs) -> Result<()> {
    let model = load_frozen(&a.model)?;
    let images = read_images(&a.input)?;
    let mut results = Vec::new();
    let mut text = String::new();
    for (i, img) in images.iter().enumerate() {
        let trace = exec::infer(&model, img)?;
        let logits = trace.logits();
        let top = logits
            .values
            .iter()
            .enumerate()
            .max_by_key(|&(j, &v)| (v, std::cmp::Reverse(j)))
            .map(|(j, _)| j)
            .unwrap_or(0);
        text += &format!("image {i}: class {top}, logits {:?}\n", logits.values);
        let mut taps = Vec::new();
        if a.dump_taps {
            for k in 1..=model.graph.num_prefix_units() {
                let t = trace.unit_output(&model.graph, k)?;
                text += &format!("  tap {k}: {}\n", tensor_summary(t));
                taps.push(json!({"unit": k, "tensor": tensor_summary(t)}));
                if let Some(dir) = &a.out_dir {
                    std::fs::create_dir_all(dir)?;
                    TensorFile::from(t).write(&dir.join(format!("image{i}_tap{k}.fxt")))?;
                }
            }
        }
        if let Some(dir) = &a.out_dir {
            std::fs::create_dir_all(dir)?;
            TensorFile::from(logits).write(&dir.join(format!("image{i}_logits.fxt")))?;
        }
        results.push(json!({"image": i, "class": top, "logits": logits.values, "taps": taps}));
    }
    emit(json, json!({ "results": results }), || text);
    Ok(())
}

fn freeze_cmd(json: bool, a: &FreezeArgs) -> Result<()> {
    let model = load_frozen(&a.model)?;
    let mut spec = FreezeSpec::new(a.n_fixed).with_taps(a.taps.iter().copied());
    spec.bn_programmable = a.adaptive_bn;
    let nl = freeze(&model, &spec)?;
    nl.write(&a.output)?;
    let stats = pipeline_stats(&nl);
    emit(
        json,
        json!({"output": a.output, "stages": nl.stages.len(), "stats": stats}),
        || {
            format!(
                "wrote {}: {} stages, {} multipliers, {} adders, {} line-buffer bits, depth {} cycles\n",
                a.output.display(),
                nl.stages.len(),
                stats.multipliers,
                stats.adders,
                stats.line_buffer_bits,
                stats.pipeline_depth
            )
        },
    );
    Ok(())
}

fn sim(json: bool, a: &SimArgs) -> Result<()> {
    let nl = Netlist::read(&a.netlist)?;
    let mut value = json!({});
    let mut text = String::new();
    if let Some(input) = &a.input {
        let frames = read_images(input)?;
        let r = simulate(&nl, &frames)?;
        let outs: Vec<_> = r.frames.iter().map(|f| tensor_summary(&f.output)).collect();
        for (i, o) in outs.iter().enumerate() {
            text += &format!("frame {i}: {o}\n");
        }
        text += &format!(
            "cycles per frame: {} (fill {} + interval {})\n",
            r.cycles_per_frame, r.fill_cycles, r.frame_interval
        );
        if let Some(path) = &a.output {
            let n = r.frames.len();
            let o = &nl.output;
            let values: Vec<i8> = r
                .frames
                .iter()
                .flat_map(|f| f.output.values.iter().copied())
                .collect();
            TensorFile {
                scale_exponent: o.exponent,
                dims: vec![n, o.height, o.width, o.channels],
                values,
            }
            .write(path)?;
        }
        value["frames"] = json!(outs);
        value["cycles_per_frame"] = json!(r.cycles_per_frame);
        value["fill_cycles"] = json!(r.fill_cycles);
        value["frame_interval"] = json!(r.frame_interval);
    }
    let mut failed = false;
    if let Some(model_path) = &a.check_against {
        let model = load_frozen(model_path)?;
        let report = check_equivalence(&nl, &model, a.trials, a.seed)?;
        failed = !report.passed;
        text += &match (&report.mismatch, report.passed) {
            (_, true) => format!(
                "equivalence: PASS over {} trials{}\n",
                report.trials,
                report
                    .warning
                    .as_deref()
                    .map(|w| format!(" ({w})"))
                    .unwrap_or_default()
            ),
            (Some(m), false) => format!(
                "equivalence: FAIL at trial {} {:?} ({}, {}) channel {}: expected {}, got {}\n",
                m.trial, m.port, m.y, m.x, m.channel, m.expected, m.actual
            ),
            (None, false) => "equivalence: FAIL\n".into(),
        };
        value["equivalence"] = serde_json::to_value(&report)?;
    }
    if a.input.is_none() && a.check_against.is_none() {
        bail!("nothing to do: pass --input and/or --check-against");
    }
    emit(json, value, || text);
    if failed {
        bail!("netlist does not match its model");
    }
    Ok(())
}

fn emit_rtl(json: bool, a: &EmitRtlArgs) -> Result<()> {
    let nl = Netlist::read(&a.netlist)?;
    let mut files = emit_verilog(&nl)?;
    files.extend(emit_testbench(&nl, a.tb_vectors, a.seed)?);
    files.write(&a.output)?;
    let names: Vec<&String> = files.files.keys().collect();
    emit(json, json!({"output": a.output, "files": names}), || {
        format!("wrote {} files under {}\n", names.len(), a.output.display())
    });
    Ok(())
}

fn ppa(json: bool, a: &PpaArgs) -> Result<()> {
    let nl = Netlist::read(&a.netlist)?;
    let (cost, table) = load_cost(&a.cost)?;
    let ffe = netlist_ppa(&nl, &cost);
    let mut value = json!({"preset": cost.preset, "ffe": ffe, "stats": pipeline_stats(&nl)});
    let mut text = format!(
        "FFE: {:.4} mm², {:.4} W, {:.3} TOPS, {:.1} TOPS/W, {:.1} fps, latency {} cycles\n",
        ffe.area_mm2,
        ffe.power_w,
        ffe.throughput_tops,
        ffe.efficiency_tops_per_w,
        ffe.frame_rate_fps,
        ffe.latency_cycles
    );
    if let (Some(budget), Some(model)) = (a.budget, &a.model) {
        let graph = read_graph(model)?;
        let f = fixed_ops_fraction(&graph, nl.n_fixed)?;
        match nvdla_point(budget - ffe.area_mm2, &table) {
            Some(b) => {
                let s = system_ppa(&ffe, f, &b)?;
                text += &format!(
                    "system @ {budget} mm² (f = {f:.3}): back end {:.3} mm² {:.3} TOPS; total {:.3} TOPS, {:.2} TOPS/W\n",
                    b.area_mm2, b.tops, s.throughput_tops, s.efficiency_tops_per_w
                );
                value["system"] = json!(s);
                value["backend"] = json!(b);
            }
            None => {
                text += &format!(
                    "system @ {budget} mm²: infeasible, too little area left for a back end\n"
                );
                value["system"] = serde_json::Value::Null;
            }
        }
        value["fixed_ops_fraction"] = json!(f);
    }
    emit(json, value, || text);
    Ok(())
}

/// The default sweep subject: seeded MobileNet-0.25, 50% sparse, 8 bits.
fn reference_model() -> Result<FrozenModel> {
    let graph = build_mobilenet(0.25, 224, 1000)?;
    let bundle = ModelBundle::synthetic(graph, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let calib = vec![ActivationTensor::random(&mut rng, 224, 224, 3, -7)];
    Ok(compress_model(
        &bundle,
        &CompressOptions::default(),
        &calib,
    )?)
}

fn dse_cmd(json: bool, a: &DseArgs) -> Result<()> {
    let (cost, table) = load_cost(&a.cost)?;
    let preset = a.preset.as_deref().map(Preset::parse).transpose()?;
    let budgets = match (&a.budgets, preset) {
        (Some(b), _) => dse::parse_budgets(b)?,
        (None, Some(p)) => p.budgets(),
        (None, None) => bail!("give --budgets or --preset"),
    };
    let splits = match (&a.splits, preset) {
        (Some(s), _) => dse::parse_splits(s)?,
        (None, Some(p)) => p.splits(),
        (None, None) => bail!("give --splits or --preset"),
    };
    let model = match &a.model {
        Some(p) => load_frozen(p)?,
        None => reference_model()?,
    };
    let mut points = dse::sweep(&model, &budgets, &splits, &cost, &table)?;
    if a.pareto {
        points = dse::pareto(&points);
    }
    dse::report(&points, a.csv.as_deref(), a.svg.as_deref())?;
    let rel = dse::relative(&points);
    let value = json!({
        "points": points.iter().zip(&rel).map(|(p, r)| {
            let mut v = serde_json::to_value(p).expect("serializable");
            v["relative_tops"] = json!(r.map(|r| r.0));
            v["relative_tops_per_w"] = json!(r.map(|r| r.1));
            v
        }).collect::<Vec<_>>(),
    });
    emit(json, value, || {
        let mut s = format!(
            "{:>3} {:>7} {:>9} {:>9} {:>8} {:>8} {:>6} {:>8} {:>6}  {}\n",
            "N", "budget", "ffe_mm2", "nvdla_mm2", "TOPS", "rel", "TOPS/W", "rel", "f", "feasible"
        );
        for (p, r) in points.iter().zip(&rel) {
            let (rt, re) = r.map_or(("-".to_string(), "-".to_string()), |(t, e)| {
                (format!("{t:.2}"), format!("{e:.2}"))
            });
            s += &format!(
                "{:>3} {:>7.2} {:>9.3} {:>9.3} {:>8.3} {:>8} {:>6.2} {:>8} {:>6.3}  {}\n",
                p.n_fixed,
                p.budget_mm2,
                p.ffe_area_mm2,
                p.backend_area_mm2,
                p.system.throughput_tops,
                rt,
                p.system.efficiency_tops_per_w,
                re,
                p.fixed_ops_fraction,
                p.feasible
            );
        }
        s
    });
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let json = cli.json;
    match &cli.command {
        Command::Model(ModelCmd::Info { manifest }) => model_info(json, manifest),
        Command::Model(ModelCmd::Init {
            width,
            resolution,
            classes,
            seed,
            no_weights,
            output,
        }) => model_init(
            json,
            *width,
            *resolution,
            *classes,
            *seed,
            *no_weights,
            output,
        ),
        Command::Tensor(TensorCmd::Random {
            shape,
            exponent,
            seed,
            output,
        }) => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let n: usize = shape.iter().product();
            if !(3..=4).contains(&shape.len()) || n == 0 {
                bail!("--shape must be HWC or NHWC with nonzero dims");
            }
            let values = (0..n).map(|_| rand::Rng::gen::<i8>(&mut rng)).collect();
            TensorFile {
                scale_exponent: *exponent,
                dims: shape.clone(),
                values,
            }
            .write(output)?;
            emit(json, json!({"output": output, "dims": shape}), || {
                format!("wrote {}\n", output.display())
            });
            Ok(())
        }
        Command::Compress(a) => compress(json, a),
        Command::Run(a) => run(json, a),
        Command::Freeze(a) => freeze_cmd(json, a),
        Command::Sim(a) => sim(json, a),
        Command::EmitRtl(a) => emit_rtl(json, a),
        Command::Ppa(a) => ppa(json, a),
        Command::Dse(a) => dse_cmd(json, a),
    }
}

/// 1 for bad input, 2 for our own inconsistencies.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if !e.is_user_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match std::panic::catch_unwind(|| dispatch(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(2),
    }
}
