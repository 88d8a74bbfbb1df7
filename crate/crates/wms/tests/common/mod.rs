#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::sync::Arc;

use wms::clock::{to_rfc3339, Clock, ManualClock};
use wms::config::ServiceConfig;
use wms::faults::Faults;
use wms::pipeline::System;
use wms_core::Timestamp;

pub const START: Timestamp = Timestamp::from_secs(1_790_000_000);

pub const CES: &str = r#"
[ Id = "ce-a"; Arch = "x86"; FreeCPUs = 8; QueueLength = 1; CloseSEs = {"se1", "se2"};
  Requirements = other.VirtualOrganisation == "atlas" || other.VirtualOrganisation == "cms" ]
[ Id = "ce-b"; Arch = "x86"; FreeCPUs = 4; QueueLength = 0; CloseSEs = {"se2"};
  Requirements = true ]
[ Id = "ce-c"; Arch = "arm"; FreeCPUs = 16; QueueLength = 0; CloseSEs = {"se3"};
  Requirements = true ]
"#;

pub const CATALOG: &str = "lfn:/data/a se1,se2\nlfn:/data/b se3\n";

/// Matches ce-a (rank 7) over ce-b (rank 4).
pub const HELLO: &str = r#"[
  Executable = "/bin/echo";
  VirtualOrganisation = "atlas";
  Requirements = other.Arch == "x86";
  Rank = other.FreeCPUs - other.QueueLength;
]"#;

/// No resource satisfies it.
pub const IMPOSSIBLE: &str = r#"[
  Executable = "/bin/true";
  Requirements = other.Arch == "sparc";
]"#;

pub fn write_is(home: &Path, taken_at: Timestamp) {
    fs::create_dir_all(home.join("is")).unwrap();
    fs::write(home.join("is/snapshot.is"), format!("taken-at {}\n{CES}", to_rfc3339(taken_at))).unwrap();
    fs::write(home.join("is/catalog.rc"), CATALOG).unwrap();
}

/// A varied job: most match, a few have no match, some need data.
pub fn job(i: usize) -> String {
    match i % 10 {
        7 => IMPOSSIBLE.to_string(),
        3 | 5 => r#"[ Executable = "/bin/a"; VirtualOrganisation = "cms"; InputData = {"lfn:/data/a"};
                     Rank = other.FreeCPUs ]"#
            .to_string(),
        _ => HELLO.to_string(),
    }
}

pub fn manual_system(home: &Path, cfg: ServiceConfig, faults: Faults) -> (System, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::new(START));
    write_is(home, START);
    let sys = System::open(home, cfg, clock.clone() as Arc<dyn Clock>, Arc::new(faults)).unwrap();
    (sys, clock)
}

pub fn live_system(home: &Path, cfg: ServiceConfig) -> System {
    let sys = System::open_live(home, cfg).unwrap();
    write_is(home, sys.clock().now());
    sys
}

/// Steps every station round-robin until a full round does nothing.
pub fn drain(sys: &System) {
    use wms::pipeline::StepOutcome;
    for _ in 0..100_000 {
        let mut busy = false;
        for i in 0..sys.queues().len() {
            let out = sys.step(i, "test").unwrap();
            busy |= !matches!(out, StepOutcome::Idle);
        }
        if !busy {
            return;
        }
    }
    panic!("pipeline did not drain");
}
