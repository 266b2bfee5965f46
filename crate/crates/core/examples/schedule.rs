//! Print the progressive schedule at full scale and at the default
//! shortened scale.
//!
//! cargo run --example schedule

use faceanon::nn::EmaConfig;
use faceanon::training::{Schedule, ScheduleConfig};

fn main() -> faceanon::Result<()> {
    for (name, cfg) in [("full scale", ScheduleConfig::full_scale()), ("default", ScheduleConfig::default())] {
        let s = Schedule::new(&cfg, 8, 128)?;
        println!("{name}: {} images per phase, {} total", s.images_per_phase(), s.total_images());
        for p in s.phases() {
            let beta = EmaConfig::with_half_life(p.batch_size, 1e4)?.beta();
            println!("  {:3}x{:<3} {:?} batch {:3} ema beta {beta:.6}", p.resolution, p.resolution, p.phase, p.batch_size);
        }
    }
    Ok(())
}
