//! Drive a run from outside through its control mailbox.
//!
//! ```bash
//! cargo run -p evocell --example mailbox_control
//! ```

use std::thread;
use std::time::Duration;

use evocell::engine::{Mailbox, RunCheckpoint};
use evocell::{Engine, Intervention, RunConfig};

fn main() {
    let dir = std::env::temp_dir().join(format!("evocell-mailbox-{}", std::process::id()));
    let mut engine = Engine::init(RunConfig { seed: 2, phase1_generations: 500, ..Default::default() }, &dir).unwrap();
    let mailbox = Mailbox::new(&dir).with_poll_interval(Duration::from_millis(20));
    mailbox.post(Intervention::Pause).unwrap();
    println!("queued {}", std::fs::read_to_string(mailbox.path()).unwrap());

    let controller = {
        let dir = dir.clone();
        thread::spawn(move || {
            let mb = Mailbox::new(&dir);
            while !RunCheckpoint::load(dir.join("gen_0000.json")).unwrap().paused {
                thread::sleep(Duration::from_millis(20));
            }
            println!("run paused at generation 0, resuming");
            mb.post(Intervention::Resume).unwrap();
            while !dir.join("gen_0003.json").exists() {
                thread::sleep(Duration::from_millis(5));
            }
            mb.post(Intervention::Stop).unwrap();
        })
    };

    let mut source = mailbox.clone();
    let report = engine.run(&mut source).unwrap();
    controller.join().unwrap();
    println!("stopped {} at generation {}", report.stopped, report.generation);
    std::fs::remove_dir_all(&dir).unwrap();
}
