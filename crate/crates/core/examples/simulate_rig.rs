//! Generate a synthetic capture and write it in the pipeline's file formats.

use std::path::PathBuf;

use mocap_fuse::pipeline::{run, PipelineConfig, RunContext, Stage};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mocap_fuse_sim"));
    let config = PipelineConfig::load(None, &["simulate.duration_s=5".into(), "simulate.seed=21".into()])?;
    let ctx = RunContext::new(config, Some(out.clone()), None)?;
    let manifest = run(Stage::Simulate, &ctx)?;
    println!("wrote {} files to {}:", manifest.stages[0].artifacts.len(), out.display());
    for a in &manifest.stages[0].artifacts {
        let len = std::fs::metadata(out.join(a))?.len();
        println!("  {a:<28} {len:>9} bytes");
    }
    println!("next: mocap-fuse pipeline --config {} --out <run dir>", out.join("pipeline.toml").display());
    Ok(())
}
