//! CSV trace and JSON summary output. Floats use Rust's shortest
//! round-trip formatting; wall-times stay out of the trace so that repeated
//! runs produce identical files.

use crate::run::{HlEvent, Summary, TraceRecord};
use std::io::Write;

pub const TRACE_HEADER: [&str; 25] = [
    "cycle", "t", "r_x", "r_y", "r_z", "l_x", "l_y", "l_z", "q_w", "q_x", "q_y", "q_z", "h_x", "h_y",
    "h_z", "j_a", "hl_event", "grad_norm", "alpha_star", "accepted", "schedule", "eq_residual",
    "in_residual", "stale", "hl_error",
];

fn schedule_field(s: &[Vec<f64>]) -> String {
    s.iter()
        .map(|leg| leg.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(";"))
        .collect::<Vec<_>>()
        .join("|")
}

pub fn write_trace<W: Write>(out: W, trace: &[TraceRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        let x = &r.state;
        let q = x.xi.quaternion();
        let mut row: Vec<String> = vec![r.cycle.to_string(), r.t.to_string()];
        row.extend(
            [x.r.x, x.r.y, x.r.z, x.l.x, x.l.y, x.l.z, q.w, q.i, q.j, q.k, x.h.x, x.h.y, x.h.z, r.j_a]
                .iter()
                .map(f64::to_string),
        );
        match r.event {
            HlEvent::None => row.extend(["none", "", "", ""].map(String::from)),
            HlEvent::Step {
                grad_norm,
                alpha_star,
                accepted,
            } => row.extend([
                "step".into(),
                grad_norm.to_string(),
                alpha_star.to_string(),
                accepted.to_string(),
            ]),
        }
        row.push(schedule_field(&r.schedule));
        row.push(r.eq_residual.to_string());
        row.push(r.in_residual.to_string());
        row.push(r.stale.to_string());
        row.push(r.hl_error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_to_string(trace: &[TraceRecord]) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, trace).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("trace is UTF-8")
}

pub fn summary_json(s: &Summary) -> String {
    serde_json::to_string_pretty(s).expect("summary serializes")
}
