use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::network::{Branch, Bus, BusKind, GridCase};
use crate::scalar::Scalar;

struct Row {
    line: usize,
    vals: Vec<f64>,
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn strip_comment(s: &str) -> &str {
    match s.find('%') {
        Some(p) => &s[..p],
        None => s,
    }
}

fn parse_row(text: &str, line: usize) -> Result<Option<Row>> {
    let vals = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| perr(line, format!("bad number `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((!vals.is_empty()).then_some(Row { line, vals }))
}

/// Split the text into `mpc.<name> = [ ... ];` matrices and `mpc.<name> = value;` scalars.
fn scan(text: &str) -> Result<(BTreeMap<String, Vec<Row>>, BTreeMap<String, (usize, f64)>)> {
    let mut blocks: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    let mut scalars = BTreeMap::new();
    let mut open: Option<(String, usize)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut s = strip_comment(raw).trim();
        if open.is_none() {
            let Some(rest) = s.strip_prefix("mpc.") else {
                continue;
            };
            let (name, rhs) = rest
                .split_once('=')
                .ok_or_else(|| perr(line, "expected `=`"))?;
            let name = name.trim().to_string();
            let rhs = rhs.trim();
            if let Some(body) = rhs.strip_prefix('[') {
                if blocks.contains_key(&name) {
                    return Err(perr(line, format!("duplicate block `{name}`")));
                }
                blocks.insert(name.clone(), Vec::new());
                open = Some((name, line));
                s = body;
            } else {
                let v = rhs.trim_end_matches(';').trim();
                if let Ok(x) = v.parse::<f64>() {
                    scalars.insert(name, (line, x));
                }
                continue;
            }
        }
        let Some((name, _)) = open.clone() else {
            continue;
        };
        let (body, closed) = match s.find(']') {
            Some(p) => (&s[..p], true),
            None => (s, false),
        };
        for part in body.split(';') {
            if let Some(row) = parse_row(part, line)? {
                blocks.get_mut(&name).expect("open block exists").push(row);
            }
        }
        if closed {
            open = None;
        }
    }
    if let Some((name, line)) = open {
        return Err(perr(line, format!("block `{name}` is never closed")));
    }
    Ok((blocks, scalars))
}

fn as_id(v: f64, line: usize, what: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v < 1e12 {
        Ok(v as usize)
    } else {
        Err(perr(line, format!("{what} `{v}` is not a positive integer")))
    }
}

/// Parse the MATPOWER subset: `baseMVA`, `bus` (>= 9 columns), `gen` (>= 8)
/// and `branch` (>= 11). Out-of-service branches and generators are skipped;
/// off-nominal taps and phase shifters are rejected.
///
/// Buses with generation or load get an RTU; all others are zero-injection.
pub fn parse_matpower<T: Scalar>(text: &str) -> Result<GridCase<T>> {
    let (blocks, scalars) = scan(text)?;
    let &(_, base) = scalars
        .get("baseMVA")
        .ok_or_else(|| perr(0, "missing `mpc.baseMVA`"))?;
    let block = |name: &str| {
        blocks
            .get(name)
            .ok_or_else(|| perr(0, format!("missing block `mpc.{name}`")))
    };
    let bus_rows = block("bus")?;
    let gen_rows = block("gen")?;
    let br_rows = block("branch")?;

    struct Gen {
        p: f64,
        q: f64,
        vg: f64,
    }
    let mut gens: BTreeMap<usize, Gen> = BTreeMap::new();
    for r in gen_rows {
        if r.vals.len() < 8 {
            return Err(perr(r.line, format!("gen row has {} columns, need 8", r.vals.len())));
        }
        if r.vals[7] <= 0.0 {
            continue;
        }
        let id = as_id(r.vals[0], r.line, "gen bus")?;
        let g = gens.entry(id).or_insert(Gen {
            p: 0.0,
            q: 0.0,
            vg: r.vals[5],
        });
        g.p += r.vals[1];
        g.q += r.vals[2];
    }

    let mut buses = Vec::with_capacity(bus_rows.len());
    let mut seen = BTreeSet::new();
    for r in bus_rows {
        if r.vals.len() < 9 {
            return Err(perr(r.line, format!("bus row has {} columns, need 9", r.vals.len())));
        }
        let v = &r.vals;
        let id = as_id(v[0], r.line, "bus id")?;
        if !seen.insert(id) {
            return Err(perr(r.line, format!("duplicate bus id {id}")));
        }
        let gen = gens.get(&id);
        let kind = match v[1] as i64 {
            3 => BusKind::Slack,
            2 if gen.is_some() => BusKind::Pv,
            1 | 2 => BusKind::Pq,
            t => return Err(perr(r.line, format!("unsupported bus type {t}"))),
        };
        let (pd, qd) = (v[2], v[3]);
        let mut bus = Bus::new(id);
        bus.kind = kind;
        let (vm, va) = (v[7], v[8].to_radians());
        bus.v_real = T::of(vm * va.cos());
        bus.v_imag = T::of(vm * va.sin());
        bus.shunt_g = T::of(v[4] / base);
        bus.shunt_b = T::of(v[5] / base);
        if gen.is_some() || pd != 0.0 || qd != 0.0 {
            let (pg, qg) = gen.map(|g| (g.p, g.q)).unwrap_or((0.0, 0.0));
            bus.injection = Some((T::of((pg - pd) / base), T::of((qg - qd) / base)));
        }
        if let Some(g) = gen {
            if matches!(kind, BusKind::Pv | BusKind::Slack) {
                bus.v_set = Some(T::of(g.vg));
            }
        }
        buses.push(bus);
    }
    if kind_count(&buses, BusKind::Slack) != 1 {
        return Err(perr(0, "case needs exactly one reference (type 3) bus"));
    }

    let mut branches = Vec::new();
    for r in br_rows {
        if r.vals.len() < 11 {
            return Err(perr(
                r.line,
                format!("branch row has {} columns, need 11", r.vals.len()),
            ));
        }
        let v = &r.vals;
        if v[10] <= 0.0 {
            continue;
        }
        let (f, t) = (as_id(v[0], r.line, "from bus")?, as_id(v[1], r.line, "to bus")?);
        for id in [f, t] {
            if !seen.contains(&id) {
                return Err(perr(r.line, format!("branch references unknown bus {id}")));
            }
        }
        if (v[8] != 0.0 && v[8] != 1.0) || v[9] != 0.0 {
            return Err(perr(
                r.line,
                "transformer tap ratio / phase shift is not supported",
            ));
        }
        let (rr, x) = (v[2], v[3]);
        if rr == 0.0 && x == 0.0 {
            return Err(perr(r.line, "branch has zero impedance"));
        }
        branches.push(Branch::from_impedance(f, t, T::of(rr), T::of(x), T::of(v[4])));
    }
    GridCase::new(T::of(base), buses, branches)
}

fn kind_count<T>(buses: &[Bus<T>], kind: BusKind) -> usize {
    buses.iter().filter(|b| b.kind == kind).count()
}
