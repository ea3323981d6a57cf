//! Reader for the MATPOWER-style case format (`mpc.baseMVA`, `mpc.bus`,
//! `mpc.gen`, `mpc.branch`). Shunts, line charging and transformer taps are
//! zeroed: the network model is series admittances only.

use std::collections::HashMap;
use std::path::Path;

use log::warn;

use super::{Bus, BusKind, Grid, Line};
use crate::error::{Error, Result};

// MATPOWER column indices (0-based).
const BUS_I: usize = 0;
const BUS_TYPE: usize = 1;
const PD: usize = 2;
const QD: usize = 3;
const GS: usize = 4;
const BS: usize = 5;
const VM: usize = 7;

const GEN_BUS: usize = 0;
const PG: usize = 1;
const QG: usize = 2;
const VG: usize = 5;
const GEN_STATUS: usize = 7;

const F_BUS: usize = 0;
const T_BUS: usize = 1;
const BR_R: usize = 2;
const BR_X: usize = 3;
const BR_B: usize = 4;
const TAP: usize = 8;
const SHIFT: usize = 9;
const BR_STATUS: usize = 10;

struct Row {
    line: usize,
    vals: Vec<f64>,
}

impl Row {
    fn get(&self, col: usize) -> f64 {
        self.vals[col]
    }

    fn get_or(&self, col: usize, default: f64) -> f64 {
        self.vals.get(col).copied().unwrap_or(default)
    }
}

#[derive(Default)]
struct Tables {
    base_mva: Option<f64>,
    bus: Option<Vec<Row>>,
    gen: Option<Vec<Row>>,
    branch: Option<Vec<Row>>,
}

pub fn read_case(path: impl AsRef<Path>) -> Result<Grid> {
    let text = std::fs::read_to_string(path)?;
    parse_case(&text)
}

/// Parses case text, logging a warning for every dropped model feature.
pub fn parse_case(text: &str) -> Result<Grid> {
    let (grid, warnings) = parse_case_with_warnings(text)?;
    for w in &warnings {
        warn!("{w}");
    }
    Ok(grid)
}

pub fn parse_case_with_warnings(text: &str) -> Result<(Grid, Vec<String>)> {
    let tables = tokenize(text)?;
    let base = tables.base_mva.unwrap_or(100.0);
    if base <= 0.0 {
        return Err(Error::Parse {
            line: 0,
            msg: format!("baseMVA must be positive, got {base}"),
        });
    }
    let bus_rows = tables.bus.ok_or_else(|| Error::Parse {
        line: 0,
        msg: "missing mpc.bus table".into(),
    })?;
    let branch_rows = tables.branch.ok_or_else(|| Error::Parse {
        line: 0,
        msg: "missing mpc.branch table".into(),
    })?;
    let gen_rows = tables.gen.unwrap_or_default();
    let mut warnings = Vec::new();

    check_width(&bus_rows, VM + 1, "bus")?;
    check_width(&gen_rows, VG + 1, "gen")?;
    check_width(&branch_rows, BR_X + 1, "branch")?;

    // Aggregate in-service generation per bus.
    let mut gen_p: HashMap<usize, f64> = HashMap::new();
    let mut gen_q: HashMap<usize, f64> = HashMap::new();
    let mut gen_v: HashMap<usize, f64> = HashMap::new();
    for r in &gen_rows {
        if r.get_or(GEN_STATUS, 1.0) <= 0.0 {
            continue;
        }
        let bus = as_id(r, GEN_BUS)?;
        *gen_p.entry(bus).or_default() += r.get(PG);
        *gen_q.entry(bus).or_default() += r.get(QG);
        gen_v.entry(bus).or_insert(r.get(VG));
    }

    let mut shunt_buses = Vec::new();
    let mut buses = Vec::with_capacity(bus_rows.len());
    for r in &bus_rows {
        let id = as_id(r, BUS_I)?;
        let code = r.get(BUS_TYPE) as i64;
        let has_gen = gen_p.contains_key(&id);
        let kind = match code {
            3 => BusKind::Slack,
            2 if has_gen => BusKind::Generator,
            2 => {
                warnings.push(format!("bus {id} is typed PV but has no in-service generator; treated as PQ"));
                BusKind::Load
            }
            1 => BusKind::Load,
            other => {
                return Err(Error::Parse {
                    line: r.line,
                    msg: format!("unsupported bus type {other} for bus {id}"),
                })
            }
        };
        if r.get(GS) != 0.0 || r.get(BS) != 0.0 {
            shunt_buses.push(id);
        }
        let v_mag = match kind {
            BusKind::Load => r.get(VM),
            _ => gen_v.get(&id).copied().unwrap_or(r.get(VM)),
        };
        if !(v_mag > 0.0 && v_mag < 2.0) {
            return Err(Error::Parse {
                line: r.line,
                msg: format!("voltage magnitude {v_mag} of bus {id} outside (0, 2) p.u."),
            });
        }
        buses.push(Bus {
            id,
            kind,
            p_inject: (gen_p.get(&id).copied().unwrap_or(0.0) - r.get(PD)) / base,
            q_inject: (gen_q.get(&id).copied().unwrap_or(0.0) - r.get(QD)) / base,
            v_mag_setpoint: v_mag,
        });
    }
    if !shunt_buses.is_empty() {
        warnings.push(format!("bus shunts zeroed at buses {shunt_buses:?}"));
    }

    let mut charged = Vec::new();
    let mut tapped = Vec::new();
    let mut lines = Vec::with_capacity(branch_rows.len());
    for r in &branch_rows {
        if r.get_or(BR_STATUS, 1.0) <= 0.0 {
            continue;
        }
        let (from, to) = (as_id(r, F_BUS)?, as_id(r, T_BUS)?);
        let (res, x) = (r.get(BR_R), r.get(BR_X));
        if res == 0.0 && x == 0.0 {
            return Err(Error::ZeroImpedance {
                from,
                to,
                line: r.line,
            });
        }
        if r.get_or(BR_B, 0.0) != 0.0 {
            charged.push((from, to));
        }
        let tap = r.get_or(TAP, 0.0);
        if (tap != 0.0 && tap != 1.0) || r.get_or(SHIFT, 0.0) != 0.0 {
            tapped.push((from, to));
        }
        lines.push(Line::from_impedance(lines.len() + 1, from, to, res, x));
    }
    if !charged.is_empty() {
        warnings.push(format!("line charging zeroed on branches {charged:?}"));
    }
    if !tapped.is_empty() {
        warnings.push(format!("tap ratio / phase shift ignored on branches {tapped:?}"));
    }

    let grid = Grid::new(buses, lines)?;
    Ok((grid, warnings))
}

fn as_id(r: &Row, col: usize) -> Result<usize> {
    let v = r.get(col);
    if v < 1.0 || v.fract() != 0.0 {
        return Err(Error::Parse {
            line: r.line,
            msg: format!("invalid bus id {v}"),
        });
    }
    Ok(v as usize)
}

fn check_width(rows: &[Row], min: usize, table: &str) -> Result<()> {
    match rows.iter().find(|r| r.vals.len() < min) {
        Some(r) => Err(Error::Parse {
            line: r.line,
            msg: format!("{table} row has {} columns, need at least {min}", r.vals.len()),
        }),
        None => Ok(()),
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

fn tokenize(text: &str) -> Result<Tables> {
    let mut tables = Tables::default();
    let mut current: Option<(String, Vec<Row>)> = None;
    let mut pending: Vec<f64> = Vec::new();
    let mut pending_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let mut line = strip_comment(raw).trim();

        if current.is_none() {
            let Some(rest) = line.strip_prefix("mpc.") else {
                continue;
            };
            let Some((name, rhs)) = rest.split_once('=') else {
                continue;
            };
            let name = name.trim();
            let rhs = rhs.trim();
            if name == "baseMVA" {
                let v = rhs.trim_end_matches(';').trim();
                tables.base_mva = Some(v.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad baseMVA value '{v}'"),
                })?);
                continue;
            }
            if !matches!(name, "bus" | "gen" | "branch") {
                continue;
            }
            let Some(body) = rhs.strip_prefix('[') else {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected '[' after mpc.{name} ="),
                });
            };
            current = Some((name.to_string(), Vec::new()));
            line = body;
        }

        let Some((_, rows)) = current.as_mut() else {
            continue;
        };
        let (content, closed) = match line.find(']') {
            Some(i) => (&line[..i], true),
            None => (line, false),
        };
        // Rows end at ';' or at end of line.
        let mut segments = content.split(';').peekable();
        while let Some(seg) = segments.next() {
            for tok in seg.split(|c: char| c.is_whitespace() || c == ',') {
                if tok.is_empty() {
                    continue;
                }
                let v: f64 = tok.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("bad number '{tok}'"),
                })?;
                if pending.is_empty() {
                    pending_line = lineno;
                }
                pending.push(v);
            }
            let row_ends = segments.peek().is_some() || !seg.trim().is_empty() || closed;
            if row_ends && !pending.is_empty() {
                rows.push(Row {
                    line: pending_line,
                    vals: std::mem::take(&mut pending),
                });
            }
        }
        if closed {
            let (name, rows) = current.take().expect("inside a table");
            let widths: Vec<usize> = rows.iter().map(|r| r.vals.len()).collect();
            if let Some(pos) = widths.iter().position(|&w| w != widths[0]) {
                return Err(Error::Parse {
                    line: rows[pos].line,
                    msg: format!(
                        "{name} row has {} columns, previous rows have {}",
                        widths[pos], widths[0]
                    ),
                });
            }
            match name.as_str() {
                "bus" => tables.bus = Some(rows),
                "gen" => tables.gen = Some(rows),
                _ => tables.branch = Some(rows),
            }
        }
    }
    if let Some((name, _)) = current {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: format!("unterminated mpc.{name} table"),
        });
    }
    Ok(tables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    const TWO_BUS: &str = "
function mpc = two
mpc.baseMVA = 100;
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	10	5	0	0	1	1	0	230	1	1.1	0.9;
];
mpc.gen = [
	1	10	0	300	-300	1	100	1	250	10;
];
mpc.branch = [
	1	2	0	0.2	0	250	250	250	0	0	1	-360	360;
];
";

    #[test]
    fn two_bus_admittance() {
        let g = parse_case(TWO_BUS).unwrap();
        assert_eq!(g.n(), 2);
        assert_eq!(g.m(), 1);
        let y = g.lines()[0].admittance;
        assert!((y - Complex64::new(0.0, -5.0)).norm() < 1e-12);
        assert!((g.buses()[1].p_inject + 0.1).abs() < 1e-15);
        assert!((g.buses()[1].q_inject + 0.05).abs() < 1e-15);
    }

    #[test]
    fn zero_impedance_rejected() {
        let text = TWO_BUS.replace("1	2	0	0.2	0", "1	2	0	0	0");
        match parse_case(&text) {
            Err(Error::ZeroImpedance { from: 1, to: 2, .. }) => {}
            other => panic!("expected zero impedance error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_number_reports_line() {
        let text = TWO_BUS.replace("2	1	10	5", "2	1	1x0	5");
        match parse_case(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_table_rejected() {
        let text = TWO_BUS.replace("2	1	10	5	0	0	1	1	0	230	1	1.1	0.9;", "2	1	10	5	0	0	1	1;");
        assert!(matches!(parse_case(&text), Err(Error::Parse { line: 6, .. })));
    }

    #[test]
    fn missing_slack_rejected() {
        let text = TWO_BUS.replace("1	3	0	0", "1	1	0	0");
        assert!(matches!(parse_case(&text), Err(Error::NoSlack)));
    }

    #[test]
    fn out_of_service_branch_dropped_and_charging_warned() {
        let text = TWO_BUS.replace(
            "];\n\";",
            "",
        );
        let text = text.replace(
            "	1	2	0	0.2	0	250	250	250	0	0	1	-360	360;",
            "	1	2	0	0.2	0.3	250	250	250	0	0	1	-360	360;\n	1	2	0	0.4	0	250	250	250	0	0	0	-360	360;",
        );
        let (g, warnings) = parse_case_with_warnings(&text).unwrap();
        assert_eq!(g.m(), 1);
        assert!(warnings.iter().any(|w| w.contains("charging")));
    }
}
