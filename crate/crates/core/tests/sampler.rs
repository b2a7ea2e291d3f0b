use std::process::{Child, Command};
use std::thread;
use std::time::Duration;

use notebook_gate::bench::{ResourceSampler, SamplerError};

struct Reaped(Child);

impl Drop for Reaped {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn mean_cpu(pid: u32, secs: u64) -> f64 {
    let s = ResourceSampler::spawn(pid, Duration::from_millis(100)).unwrap();
    thread::sleep(Duration::from_secs(secs));
    let trace = s.stop();
    assert!(!trace.samples.is_empty());
    trace.samples.iter().map(|s| s.cpu_percent).sum::<f64>() / trace.samples.len() as f64
}

#[test]
fn idle_process_is_near_zero() {
    let child = Reaped(Command::new("sleep").arg("30").spawn().unwrap());
    let cpu = mean_cpu(child.0.id(), 2);
    assert!(cpu < 2.0, "idle cpu {cpu}");
}

#[test]
fn busy_loop_is_about_one_core() {
    let child = Reaped(
        Command::new("sh")
            .args(["-c", "while :; do :; done"])
            .spawn()
            .unwrap(),
    );
    thread::sleep(Duration::from_millis(200));
    let cpu = mean_cpu(child.0.id(), 2);
    assert!((90.0..=110.0).contains(&cpu), "spin cpu {cpu}");
}

#[test]
fn rejects_short_interval() {
    assert!(matches!(
        ResourceSampler::spawn(std::process::id(), Duration::from_millis(9)),
        Err(SamplerError::InvalidInterval(_))
    ));
}
