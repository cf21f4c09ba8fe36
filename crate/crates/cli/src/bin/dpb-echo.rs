//! Minimal policy process: answers every observation with a zero relative
//! pose. Used to check the process boundary against the builtin zero policy.
//!
//! `--protocol <version>` announces a different protocol version.

use drivebench::bridge::{ActionSpace, Frame, PROTOCOL_VERSION};
use drivebench::dynamics::Action;
use std::io::{BufRead, Write};
use std::process::ExitCode;

fn emit(out: &mut impl Write, f: &Frame) -> std::io::Result<()> {
    writeln!(out, "{}", serde_json::to_string(f).expect("frames serialize"))?;
    out.flush()
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let version = match args.as_slice() {
        [] => PROTOCOL_VERSION.to_string(),
        [flag, v] if flag == "--protocol" => v.clone(),
        _ => {
            eprintln!("usage: dpb-echo [--protocol VERSION]");
            return ExitCode::from(2);
        }
    };
    let stdin = std::io::stdin();
    let mut out = std::io::stdout().lock();
    for (i, line) in stdin.lock().lines().enumerate() {
        let Ok(line) = line else {
            return ExitCode::from(1);
        };
        let reply = match serde_json::from_str::<Frame>(&line) {
            Ok(Frame::Handshake { .. }) => Frame::Handshake {
                version: version.clone(),
                action_space: Some(ActionSpace::RelativeTargetPose),
            },
            Ok(Frame::Reset { scenario, actors }) => Frame::Reset { scenario, actors },
            Ok(Frame::Observation { step, actor, .. }) => Frame::Action {
                step,
                actor,
                payload: Action::ZERO_RELATIVE,
            },
            Ok(Frame::Shutdown) => return ExitCode::SUCCESS,
            Ok(other) => Frame::Error {
                line: Some(i + 1),
                message: format!("unexpected frame {other:?}"),
            },
            Err(e) => Frame::Error {
                line: Some(i + 1),
                message: e.to_string(),
            },
        };
        let fatal = matches!(reply, Frame::Error { .. });
        if emit(&mut out, &reply).is_err() || fatal {
            return ExitCode::from(1);
        }
    }
    ExitCode::SUCCESS
}
