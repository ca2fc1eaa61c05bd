use lasyn_core::pipeline::{run_pipeline, ExperimentConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("baseline");
    let text = format!(
        "mode = {mode}\n\
         seeds = 0\n\
         metrics = wer\n\
         corpus.paired = 200\n\
         corpus.text_pool = 800\n\
         corpus.noise_other = 0.035\n\
         corpus.reserved_test = 10\n\
         mel.bins = 40\n\
         model.width = 48\n\
         model.blocks_low = 1\n\
         model.blocks_high = 1\n\
         model.ffn_mult = 2\n\
         model.joint_dim = 48\n\
         pretrain.epochs = 100\n\
         pretrain.lr = 2e-3\n\
         pretrain.sa_time_width = 10\n\
         pretrain.sa_freq_masks = 1\n\
         pretrain.sa_freq_width = 5\n\
         synth.filters = 96\n\
         synth.layers = 2\n\
         synth.epochs = 40\n\
         curriculum.phase1_steps = 600\n\
         curriculum.phase2_steps = 400\n\
         diffusion.channels = 64\n\
         diffusion.levels = 3\n\
         diffusion.train_steps = 2500\n\
         diffusion.attn_factors = 4,2,1\n\
         diffusion.steps = 12\n\
         diffusion.guidance = 3.0\n\
         diffusion.ae_epochs = 30\n\
         diffusion.cache = true\n"
    );
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let out = std::path::PathBuf::from(format!("/tmp/lasyn-smoke-{mode}"));
    let _ = std::fs::remove_dir_all(&out);
    let t = std::time::Instant::now();
    let report = run_pipeline(&cfg, &out, false).unwrap();
    println!("=== {mode} in {:.1}s ===", t.elapsed().as_secs_f64());
    for row in &report.rows {
        for seed in &row.seeds {
            println!("seed {}: {:?}", seed.seed, seed.metrics);
            println!("  walls: {:?}", seed.wall_ms);
            for (stage, curve) in &seed.curves {
                let n = curve.len();
                if n > 0 {
                    println!("  {stage}: first {:.3} mid {:.3} last {:.3} (n={n})", curve[0], curve[n/2], curve[n-1]);
                }
            }
        }
    }
}
