//! Simulate, run every stage from files, and print the evaluation report.

use std::path::PathBuf;

use mocap_fuse::pipeline::{run, PipelineConfig, RunContext, Stage, REPORT_TXT, SIM_CONFIG};

fn main() -> anyhow::Result<()> {
    let root =
        std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("mocap_fuse_e2e"));
    let (sim, out) = (root.join("sim"), root.join("run"));

    run(Stage::Simulate, &RunContext::new(PipelineConfig::default(), Some(sim.clone()), None)?)?;
    let config = PipelineConfig::load(Some(&sim.join(SIM_CONFIG)), &[])?;
    println!("config hash {}", config.hash());
    let manifest = run(Stage::Pipeline, &RunContext::new(config, Some(out.clone()), None)?)?;
    for s in &manifest.stages {
        println!("{:<12} {:>6.2} s  {}", s.stage.to_string(), s.seconds, s.artifacts.join(", "));
    }
    print!("{}", std::fs::read_to_string(out.join(REPORT_TXT))?);
    Ok(())
}
