//! Instruction counts from `valgrind --tool=callgrind`, for hosts without a usable PMU.
//!
//! Collection is restricted to one function with `--toggle-collect`, so only instructions
//! executed inside that function (and its callees) are counted.

use std::io;
use std::path::Path;
use std::process::Command;

/// Executed instructions (`Ir`) from a callgrind output file, or `None` if the file has no totals.
pub fn parse_total_instructions(text: &str) -> Option<u64> {
    let mut ir_index = 0;
    let mut total = None;
    for line in text.lines() {
        if let Some(events) = line.strip_prefix("events:") {
            ir_index = events.split_whitespace().position(|e| e == "Ir")?;
        } else if let Some(rest) = line.strip_prefix("summary:").or_else(|| line.strip_prefix("totals:")) {
            let v = rest.split_whitespace().nth(ir_index)?.parse().ok()?;
            // `totals:` repeats the summary; the first one seen wins
            total.get_or_insert(v);
        }
    }
    total
}

pub fn valgrind_available() -> bool {
    Command::new("valgrind")
        .arg("--version")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

/// Command that runs `program` under callgrind, counting only inside functions matching `toggle`.
pub fn command(program: &Path, toggle: &str, out_file: &Path) -> Command {
    let mut cmd = Command::new("valgrind");
    cmd.arg("--tool=callgrind")
        .arg("--collect-atstart=no")
        .arg(format!("--toggle-collect={toggle}"))
        .arg(format!("--callgrind-out-file={}", out_file.display()))
        .arg(program);
    cmd
}

/// Runs a prepared command and returns the counted instructions.
pub fn run(mut cmd: Command, out_file: &Path) -> io::Result<u64> {
    let out = cmd.output()?;
    if !out.status.success() {
        return Err(io::Error::other(format!(
            "callgrind run failed ({}): {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).lines().rev().take(5).collect::<Vec<_>>().join(" | ")
        )));
    }
    let text = std::fs::read_to_string(out_file)?;
    parse_total_instructions(&text)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "callgrind output has no totals"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_summary() {
        let text = "# callgrind format\nversion: 1\nevents: Ir\nfn=(1) main\n3 10\nsummary: 123456\ntotals: 123456\n";
        assert_eq!(parse_total_instructions(text), Some(123_456));
        let multi = "events: Dr Ir\ntotals: 5 99\n";
        assert_eq!(parse_total_instructions(multi), Some(99));
        assert_eq!(parse_total_instructions("events: Ir\n"), None);
        assert_eq!(parse_total_instructions("events: Dr\nsummary: 3\n"), None);
    }
}
