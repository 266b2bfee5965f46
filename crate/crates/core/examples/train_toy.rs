//! Train the small configuration on procedural faces and report the FID of
//! anonymized crops before and after training.
//!
//! cargo run --release --example train_toy -- --seed 3 --no-pose

use std::time::Instant;

use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use faceanon::evaluation::{desk_fid, RandomConvEmbedder};
use faceanon::generator::Generator;
use faceanon::training::{TrainConfig, Trainer};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_pose: bool,
    /// Stop after this many steps instead of finishing the schedule.
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long, default_value_t = 50)]
    log_every: u64,
}

fn main() -> faceanon::Result<()> {
    let args = Args::parse();
    let mut cfg = TrainConfig::toy();
    cfg.seed = args.seed;
    cfg.generator.use_pose = !args.no_pose;
    cfg.discriminator.use_pose = !args.no_pose;
    let data = cfg.data.load(cfg.generator.max_resolution)?;
    let embedder = RandomConvEmbedder::default();

    let mut untrained = Generator::new(cfg.generator.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    while untrained.resolution() < cfg.generator.max_resolution {
        untrained.grow(&mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    }
    let before = desk_fid(&untrained, &data, &embedder)?;
    println!("untrained FID {before:.4}");

    let mut trainer = Trainer::new(cfg)?;
    let t0 = Instant::now();
    trainer.run(&data, args.max_steps, |_, m| {
        if m.step % args.log_every == 0 {
            println!(
                "step {:4} res {:2} {:?} alpha {:.2} loss_d {:8.4} loss_g {:8.4} ({:.0}s)",
                m.step,
                m.resolution,
                m.phase,
                m.alpha,
                m.loss_d,
                m.loss_g,
                t0.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })?;
    if trainer.is_finished() {
        let after = desk_fid(trainer.ema_generator(), &data, &embedder)?;
        println!("trained FID {after:.4} ({:.1}% of untrained)", 100.0 * after / before);
    }
    println!("{:.0}s", t0.elapsed().as_secs_f64());
    Ok(())
}
