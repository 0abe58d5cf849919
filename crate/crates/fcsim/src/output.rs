//! CSV emission: a per-step trace plus a per-session summary.
//!
//! `trace.csv` columns: `t_s, y_kwh, p_pv_kw, p_s_kw, p_g_kw, p_total_kw`
//! followed by `ref_<id>_kw, p_<id>_kw, x_<id>_kwh` for every fleet entry in
//! file order. Numbers carry 6 significant digits with a dot decimal
//! separator regardless of locale; sessions not plugged in leave their
//! fields empty so the column count stays constant.

use std::io::Write;
use std::path::Path;

use crate::sim::RunLog;

/// Formats with 6 significant digits, locale-independent.
pub fn format_sig(v: f64) -> String {
    debug_assert!(v.is_finite());
    if v == 0.0 {
        return "0".to_string();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Writes `trace.csv` and `summary.csv` into `out_dir`, creating it if
/// needed. Output bytes are a pure function of the log.
pub fn write_logs(log: &RunLog, out_dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    write_trace(log, &out_dir.join("trace.csv"))?;
    write_summary(log, &out_dir.join("summary.csv"))?;
    Ok(())
}

fn write_trace(log: &RunLog, path: &Path) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let ids: Vec<&str> = log.sessions.iter().map(|s| s.id.as_str()).collect();

    let mut header = vec![
        "t_s".to_string(),
        "y_kwh".to_string(),
        "p_pv_kw".to_string(),
        "p_s_kw".to_string(),
        "p_g_kw".to_string(),
        "p_total_kw".to_string(),
    ];
    for id in &ids {
        header.push(format!("ref_{id}_kw"));
        header.push(format!("p_{id}_kw"));
        header.push(format!("x_{id}_kwh"));
    }
    writeln!(out, "{}", header.join(","))?;

    for row in &log.steps {
        let mut fields = vec![
            format_sig(row.t_s),
            format_sig(row.y_kwh),
            format_sig(row.p_pv_kw),
            format_sig(row.p_s_kw),
            format_sig(row.p_g_kw),
            format_sig(row.p_total_kw),
        ];
        for id in &ids {
            match row.sessions.iter().find(|s| s.id == *id) {
                Some(s) => {
                    fields.push(format_sig(s.p_ref_kw));
                    fields.push(format_sig(s.p_kw));
                    fields.push(format_sig(s.x_kwh));
                }
                None => {
                    fields.push(String::new());
                    fields.push(String::new());
                    fields.push(String::new());
                }
            }
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()
}

fn write_summary(log: &RunLog, path: &Path) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "id,t_arr_s,t_complete_s,t_depart_s,energy_kwh")?;
    for s in &log.sessions {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.id,
            format_sig(s.t_arr_s),
            s.t_complete_s.map(format_sig).unwrap_or_default(),
            s.t_depart_s.map(format_sig).unwrap_or_default(),
            format_sig(s.energy_kwh),
        )?;
    }
    out.flush()
}
