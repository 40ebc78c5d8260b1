//! `sareg`: registration pipeline commands for contrast-enhanced liver CT.
//!
//! Five subcommands cover the pipeline end to end: `preprocess` prepares a
//! volume, `extract` pulls surfaces, skeletons, or distance maps from masks,
//! `register` optimizes a field pair, `evaluate` scores a field against
//! masks and optional ground truth, and `phantom` generates synthetic pairs.
//! Every command is deterministic given its flags, writes all data to files,
//! and prints exactly one summary line to stdout.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 registration ended
//! without reaching its energy tolerance (outputs are still written).

use clap::{Args, Parser, Subcommand, ValueEnum};
use sareg_core::energy::EnergyWeights;
use sareg_core::field::DisplacementField;
use sareg_core::frangi::FrangiParams;
use sareg_core::io::{read_nifti, write_nifti, write_report, NiftiVolume, ReportDocument, ReportFormat};
use sareg_core::metrics::{
    connected_regions, dsc_hard, ravd, rfp, surface_distances, FieldMetrics, LiverMetrics,
    MetricsReport, TruthMetrics, VesselMetrics,
};
use sareg_core::optimizer::{register, RegistrationConfig, RegistrationMasks};
use sareg_core::phantom::{generate, ground_truth_error, PhantomSpec};
use sareg_core::preprocess::{run_pipeline, PreprocessConfig};
use sareg_core::skeleton::skeletonize;
use sareg_core::structures::{distance_map, extract_surface};
use sareg_core::volume::{warp_mask, LabelMask, ScalarVolume};
use sareg_core::{parallel, Error};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "sareg",
    version,
    about = "Structure-aware deformable registration for liver DCE-CT"
)]
struct Cli {
    /// Worker threads; defaults to SAREG_THREADS or all cores.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prepare a volume: mask, clip, normalize, median filter, enhance vessels.
    Preprocess(PreprocessArgs),
    /// Extract a surface, skeleton, or distance map from a mask.
    Extract(ExtractArgs),
    /// Register a moving volume onto a fixed volume.
    Register(RegisterArgs),
    /// Score a displacement field against masks and optional ground truth.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic phantom pair with known ground truth.
    Phantom(PhantomArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Input scalar volume (.nii or .nii.gz).
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,

    /// Optional mask; voxels outside it are zeroed before normalization.
    #[arg(long, value_name = "FILE")]
    mask: Option<PathBuf>,

    /// Output volume path.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,

    /// Median filter window edge length, odd.
    #[arg(long, default_value_t = 3, value_name = "VOXELS")]
    median_window: usize,

    /// Vesselness superimposition gain; 0 disables enhancement.
    #[arg(long, default_value_t = 1.0)]
    gain: f64,

    /// Vesselness tube scales in millimeters, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0])]
    scales: Vec<f64>,

    /// Plate-vs-line sensitivity of the vesselness filter.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,

    /// Blob-vs-line sensitivity of the vesselness filter.
    #[arg(long, default_value_t = 0.5)]
    beta: f64,

    /// Structureness scale; selected from the data per scale when omitted.
    #[arg(long, value_name = "C")]
    structureness: Option<f64>,

    /// Percentile clip LOW,HIGH applied before normalization.
    #[arg(long, num_args = 2, value_delimiter = ',', value_names = ["LOW", "HIGH"])]
    clip: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExtractKind {
    /// 26-connected one-voxel boundary shell of the mask.
    Surface,
    /// One-voxel-wide centerline by topology-preserving thinning.
    Skeleton,
    /// Euclidean distance from each foreground voxel to the background.
    Distance,
}

#[derive(Args)]
struct ExtractArgs {
    /// Input mask volume.
    #[arg(long, value_name = "FILE")]
    mask: PathBuf,

    /// What to extract.
    #[arg(long, value_enum)]
    kind: ExtractKind,

    /// Output path; surface and skeleton write masks, distance a volume.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormatArg {
    /// Flat `key = value` lines.
    Text,
    /// Pretty-printed JSON.
    Json,
}

impl From<ReportFormatArg> for ReportFormat {
    fn from(f: ReportFormatArg) -> Self {
        match f {
            ReportFormatArg::Text => ReportFormat::Text,
            ReportFormatArg::Json => ReportFormat::Structured,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldUnits {
    /// Displacement components in voxels.
    Voxel,
    /// Displacement components in millimeters.
    Mm,
}

#[derive(Args)]
struct RegisterArgs {
    /// Fixed (target) volume.
    #[arg(long, value_name = "FILE")]
    fixed: PathBuf,

    /// Moving (source) volume, resampled through the forward field.
    #[arg(long, value_name = "FILE")]
    moving: PathBuf,

    /// Liver mask in the fixed volume.
    #[arg(long, value_name = "FILE")]
    fixed_liver: Option<PathBuf>,

    /// Liver mask in the moving volume.
    #[arg(long, value_name = "FILE")]
    moving_liver: Option<PathBuf>,

    /// Vessel mask in the fixed volume (unpaired class).
    #[arg(long, value_name = "FILE")]
    fixed_vessel: Option<PathBuf>,

    /// Vessel mask in the moving volume (unpaired class).
    #[arg(long, value_name = "FILE")]
    moving_vessel: Option<PathBuf>,

    /// Output forward field, mapping fixed coordinates into the moving volume.
    #[arg(long, value_name = "FILE")]
    out_forward: PathBuf,

    /// Output backward field.
    #[arg(long, value_name = "FILE")]
    out_backward: Option<PathBuf>,

    /// Metrics and energy-trace report path.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,

    /// Report encoding.
    #[arg(long, value_enum, default_value_t = ReportFormatArg::Text)]
    report_format: ReportFormatArg,

    /// Units of the written field components.
    #[arg(long, value_enum, default_value_t = FieldUnits::Voxel)]
    field_units: FieldUnits,

    /// Liver overlap weight λ1.
    #[arg(long, default_value_t = 5.0)]
    lambda_liver: f64,

    /// Vessel non-overlap weight λ2.
    #[arg(long, default_value_t = 4.0)]
    lambda_vessel: f64,

    /// Field smoothness weight λ3.
    #[arg(long, default_value_t = 1.0)]
    lambda_smooth: f64,

    /// Liver surface constraint weight λ4.
    #[arg(long, default_value_t = 0.5)]
    lambda_surface: f64,

    /// Vessel centerline constraint weight λ5.
    #[arg(long, default_value_t = 1.0)]
    lambda_centerline: f64,

    /// Inverse-consistency weight.
    #[arg(long, default_value_t = 1.0)]
    lambda_ic: f64,

    /// Resolution pyramid depth.
    #[arg(long, default_value_t = 3)]
    levels: usize,

    /// Iteration cap per level.
    #[arg(long, default_value_t = 200)]
    iterations: usize,

    /// Base step size of the adaptive-moment update.
    #[arg(long, default_value_t = 1e-4)]
    step_size: f64,

    /// Largest per-iteration displacement change in voxels.
    #[arg(long, default_value_t = 0.25)]
    max_step: f64,

    /// Local NCC window edge length; 0 selects global NCC.
    #[arg(long, default_value_t = 9, value_name = "VOXELS")]
    ncc_window: usize,

    /// Relative energy decrease below which a level stops.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,

    /// Optimize only the forward field and derive the backward one from it.
    #[arg(long)]
    derive_backward: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Displacement field to score.
    #[arg(long, value_name = "FILE")]
    field: PathBuf,

    /// Units the field file stores.
    #[arg(long, value_enum, default_value_t = FieldUnits::Voxel)]
    field_units: FieldUnits,

    /// Liver mask in the fixed volume.
    #[arg(long, value_name = "FILE")]
    fixed_liver: Option<PathBuf>,

    /// Liver mask in the moving volume, warped through the field.
    #[arg(long, value_name = "FILE")]
    moving_liver: Option<PathBuf>,

    /// Vessel mask in the fixed volume.
    #[arg(long, value_name = "FILE")]
    fixed_vessel: Option<PathBuf>,

    /// Vessel mask in the moving volume, warped through the field.
    #[arg(long, value_name = "FILE")]
    moving_vessel: Option<PathBuf>,

    /// Ground-truth field; enables endpoint-error metrics over the fixed
    /// liver mask, or the whole grid when no liver mask is given.
    #[arg(long, value_name = "FILE")]
    truth: Option<PathBuf>,

    /// Report output path.
    #[arg(long, value_name = "FILE")]
    report: PathBuf,

    /// Report encoding.
    #[arg(long, value_enum, default_value_t = ReportFormatArg::Text)]
    report_format: ReportFormatArg,

    /// Overlap volume (0 background, 1 fixed only, 2 warped only, 3 both)
    /// for the liver pair, or the vessel pair when no liver masks are given.
    #[arg(long, value_name = "FILE")]
    overlay: Option<PathBuf>,
}

#[derive(Args)]
struct PhantomArgs {
    /// Generation seed; overrides the spec file's seed.
    #[arg(long)]
    seed: Option<u64>,

    /// JSON generation spec; omitted fields take their defaults.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
}

fn read_scalar(path: &Path) -> Result<ScalarVolume, Error> {
    read_nifti(path)?.expect_scalar()
}

fn read_mask(path: &Path) -> Result<LabelMask, Error> {
    read_nifti(path)?.expect_mask()
}

fn read_mask_opt(path: Option<&PathBuf>) -> Result<Option<LabelMask>, Error> {
    path.map(|p| read_mask(p)).transpose()
}

fn read_field(path: &Path, units: FieldUnits) -> Result<DisplacementField, Error> {
    let field = read_nifti(path)?.expect_field()?;
    Ok(match units {
        FieldUnits::Voxel => field,
        FieldUnits::Mm => convert_field(&field, |c, s| c / s),
    })
}

fn write_field(field: &DisplacementField, path: &Path, units: FieldUnits) -> Result<(), Error> {
    let out = match units {
        FieldUnits::Voxel => field.clone(),
        FieldUnits::Mm => convert_field(field, |c, s| c * s),
    };
    write_nifti(&NiftiVolume::Field(out), path)
}

fn convert_field(field: &DisplacementField, op: impl Fn(f64, f64) -> f64) -> DisplacementField {
    let spacing = field.geometry().spacing;
    let vectors = field
        .vectors()
        .iter()
        .map(|v| [op(v[0], spacing[0]), op(v[1], spacing[1]), op(v[2], spacing[2])])
        .collect();
    DisplacementField::from_vec(field.geometry(), vectors)
        .expect("conversion preserves the vector count")
}

fn run_preprocess(args: &PreprocessArgs) -> Result<String, Error> {
    let vol = read_scalar(&args.input)?;
    let mask = read_mask_opt(args.mask.as_ref())?;
    let clip = match args.clip.as_deref() {
        Some([lo, hi]) => Some((*lo, *hi)),
        Some(_) => {
            return Err(Error::InvalidParameter(
                "--clip takes exactly two percentiles".into(),
            ))
        }
        None => None,
    };
    let cfg = PreprocessConfig {
        median_window: args.median_window,
        frangi: FrangiParams {
            scales: args.scales.clone(),
            alpha: args.alpha,
            beta: args.beta,
            c: args.structureness,
        },
        gain: args.gain,
        percentile_clip: clip,
    };
    let out = run_pipeline(&vol, mask.as_ref(), &cfg)?;
    let dims = out.geometry().dims;
    write_nifti(&NiftiVolume::Scalar(out), &args.out)?;
    Ok(format!(
        "preprocess: dims={}x{}x{} wrote {}",
        dims[0],
        dims[1],
        dims[2],
        args.out.display()
    ))
}

fn run_extract(args: &ExtractArgs) -> Result<String, Error> {
    let mask = read_mask(&args.mask)?;
    let (payload, count) = match args.kind {
        ExtractKind::Surface => {
            let set = extract_surface(&mask)?;
            (NiftiVolume::Mask(set.to_mask()), set.len())
        }
        ExtractKind::Skeleton => {
            let set = skeletonize(&mask)?;
            (NiftiVolume::Mask(set.to_mask()), set.len())
        }
        ExtractKind::Distance => {
            let dm = distance_map(&mask).into_volume();
            let count = dm.data().iter().filter(|v| **v > 0.0).count();
            (NiftiVolume::Scalar(dm), count)
        }
    };
    write_nifti(&payload, &args.out)?;
    Ok(format!(
        "extract: foreground={count} wrote {}",
        args.out.display()
    ))
}

fn build_config(args: &RegisterArgs) -> RegistrationConfig {
    RegistrationConfig {
        weights: EnergyWeights {
            liver: args.lambda_liver,
            vessel: args.lambda_vessel,
            smoothness: args.lambda_smooth,
            surface: args.lambda_surface,
            centerline: args.lambda_centerline,
            inverse_consistency: args.lambda_ic,
        },
        levels: args.levels,
        iterations: args.iterations,
        step_size: args.step_size,
        max_step: args.max_step,
        ncc_window: args.ncc_window,
        tolerance: args.tolerance,
        derive_backward: args.derive_backward,
        ..RegistrationConfig::default()
    }
}

fn run_register(args: &RegisterArgs) -> Result<(String, bool), Error> {
    let fixed = read_scalar(&args.fixed)?;
    let moving = read_scalar(&args.moving)?;
    let fixed_liver = read_mask_opt(args.fixed_liver.as_ref())?;
    let moving_liver = read_mask_opt(args.moving_liver.as_ref())?;
    let fixed_vessel = read_mask_opt(args.fixed_vessel.as_ref())?;
    let moving_vessel = read_mask_opt(args.moving_vessel.as_ref())?;
    let masks = RegistrationMasks {
        fixed_liver: fixed_liver.as_ref(),
        moving_liver: moving_liver.as_ref(),
        fixed_vessel: fixed_vessel.as_ref(),
        moving_vessel: moving_vessel.as_ref(),
    };
    let config = build_config(args);
    let result = register(&fixed, &moving, &masks, &config)?;

    write_field(&result.forward, &args.out_forward, args.field_units)?;
    if let Some(path) = &args.out_backward {
        write_field(&result.backward, path, args.field_units)?;
    }
    if let Some(path) = &args.report {
        let doc = ReportDocument {
            metrics: result.report.clone(),
            trace: result.trace.clone(),
        };
        write_report(&doc, path, args.report_format.into())?;
    }

    let final_energy = result
        .trace
        .last()
        .map_or(f64::NAN, |entry| entry.energy.total);
    let summary = format!(
        "register: converged={} iterations={} energy={final_energy} wrote {}",
        result.converged,
        result.trace.len(),
        args.out_forward.display()
    );
    Ok((summary, result.converged))
}

fn overlay_codes(fixed: &LabelMask, warped: &LabelMask) -> ScalarVolume {
    let data = fixed
        .data()
        .iter()
        .zip(warped.data())
        .map(|(&f, &w)| match (f, w) {
            (false, false) => 0.0,
            (true, false) => 1.0,
            (false, true) => 2.0,
            (true, true) => 3.0,
        })
        .collect();
    ScalarVolume::from_vec(fixed.geometry(), data).expect("masks share one grid")
}

fn run_evaluate(args: &EvaluateArgs) -> Result<String, Error> {
    let field = read_field(&args.field, args.field_units)?;
    let fixed_liver = read_mask_opt(args.fixed_liver.as_ref())?;
    let moving_liver = read_mask_opt(args.moving_liver.as_ref())?;
    let fixed_vessel = read_mask_opt(args.fixed_vessel.as_ref())?;
    let moving_vessel = read_mask_opt(args.moving_vessel.as_ref())?;

    let mut report = MetricsReport {
        field: Some(FieldMetrics { rfp: rfp(&field) }),
        ..MetricsReport::default()
    };
    let mut summary = String::from("evaluate:");
    let _ = write!(summary, " rfp={}", rfp(&field));

    let mut overlay_pair: Option<(LabelMask, LabelMask)> = None;
    if let (Some(fl), Some(ml)) = (&fixed_liver, &moving_liver) {
        let warped = warp_mask(ml, &field)?;
        let dsc = dsc_hard(fl, &warped)?;
        let (assd, mssd) = surface_distances(fl, &warped)?;
        report.liver = Some(LiverMetrics {
            dsc,
            ravd: ravd(fl, &warped)?,
            assd,
            mssd,
        });
        let _ = write!(summary, " liver_dsc={dsc}");
        overlay_pair = Some((fl.clone(), warped));
    }
    if let (Some(fv), Some(mv)) = (&fixed_vessel, &moving_vessel) {
        let warped = warp_mask(mv, &field)?;
        let dsc = dsc_hard(fv, &warped)?;
        report.vessel = Some(VesselMetrics {
            dsc,
            connected_regions: connected_regions(&warped),
        });
        let _ = write!(summary, " vessel_dsc={dsc}");
        if overlay_pair.is_none() {
            overlay_pair = Some((fv.clone(), warped));
        }
    }
    if let Some(path) = &args.truth {
        let truth = read_field(path, args.field_units)?;
        let roi = match &fixed_liver {
            Some(mask) => mask.clone(),
            None => LabelMask::from_vec(
                field.geometry(),
                vec![true; field.geometry().voxel_count()],
            )?,
        };
        let (mean, median, max) = ground_truth_error(&field, &truth, &roi)?;
        report.truth = Some(TruthMetrics {
            mean_epe: mean,
            median_epe: median,
            max_epe: max,
        });
        let _ = write!(summary, " median_epe={median}");
    }

    if report.liver.is_none() && report.vessel.is_none() && report.truth.is_none() {
        return Err(Error::InvalidParameter(
            "evaluate needs a liver pair, a vessel pair, or a truth field".into(),
        ));
    }

    if let Some(path) = &args.overlay {
        let (fixed, warped) = overlay_pair.as_ref().ok_or_else(|| {
            Error::InvalidParameter("--overlay needs a liver or vessel mask pair".into())
        })?;
        write_nifti(&NiftiVolume::Scalar(overlay_codes(fixed, warped)), path)?;
    }

    let doc = ReportDocument {
        metrics: report,
        trace: Vec::new(),
    };
    write_report(&doc, &args.report, args.report_format.into())?;
    let _ = write!(summary, " wrote {}", args.report.display());
    Ok(summary)
}

fn run_phantom(args: &PhantomArgs) -> Result<String, Error> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<PhantomSpec>(&text)
                .map_err(|e| Error::InvalidParameter(format!("bad spec file: {e}")))?
        }
        None => PhantomSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let pair = generate(&spec)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let files: [(&str, NiftiVolume); 7] = [
        ("fixed.nii.gz", NiftiVolume::Scalar(pair.fixed)),
        ("moving.nii.gz", NiftiVolume::Scalar(pair.moving)),
        ("fixed_liver.nii.gz", NiftiVolume::Mask(pair.fixed_liver)),
        ("moving_liver.nii.gz", NiftiVolume::Mask(pair.moving_liver)),
        ("fixed_vein.nii.gz", NiftiVolume::Mask(pair.fixed_vein)),
        ("moving_artery.nii.gz", NiftiVolume::Mask(pair.moving_artery)),
        ("truth.nii.gz", NiftiVolume::Field(pair.truth)),
    ];
    let count = files.len();
    for (name, payload) in &files {
        write_nifti(payload, args.out_dir.join(name))?;
    }
    Ok(format!(
        "phantom: seed={} dims={}x{}x{} wrote {count} files to {}",
        spec.seed,
        spec.dims[0],
        spec.dims[1],
        spec.dims[2],
        args.out_dir.display()
    ))
}

fn run(cli: &Cli) -> Result<(String, u8), Error> {
    if let Some(threads) = cli.threads {
        parallel::configure_threads(threads);
    }
    match &cli.command {
        Command::Preprocess(args) => run_preprocess(args).map(|s| (s, 0)),
        Command::Extract(args) => run_extract(args).map(|s| (s, 0)),
        Command::Register(args) => run_register(args)
            .map(|(s, converged)| (s, if converged { 0 } else { EXIT_NOT_CONVERGED })),
        Command::Evaluate(args) => run_evaluate(args).map(|s| (s, 0)),
        Command::Phantom(args) => run_phantom(args).map(|s| (s, 0)),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok((summary, code)) => {
            println!("{summary}");
            ExitCode::from(code)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(EXIT_DATA)
        }
    }
}
