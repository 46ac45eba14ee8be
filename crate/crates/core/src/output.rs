//! Text serialization of run artifacts.

use serde_json::{json, Map, Value};

use crate::metrics::{Row, Snapshot, Summary};
use crate::scalar::Scalar;

pub const SERIES_HEADER: &str = "t_min,v_kmh,rho_veh_per_lane_km,N,n00,n01,n10,w,a00_per_h,p01_per_h,d10_per_h,z_km,cumF,cumA,cumP,cumD,c";
pub const SNAPSHOT_HEADER: &str = "t_min,x_km,k01,k10,K01,K10";

/// Nine significant digits in the style of C's `%.9g`.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-4..9).contains(&exp) {
        let s = format!("{:.*}", (8 - exp) as usize, x);
        trim_zeros(&s).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mant), sign, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn series_values<T: Scalar>(r: &Row<T>) -> [f64; 17] {
    [
        r.t.as_f64() * 60.0,
        r.v.as_f64(),
        r.rho.as_f64(),
        r.n_total.as_f64(),
        r.n00.as_f64(),
        r.n01.as_f64(),
        r.n10.as_f64(),
        r.w.as_f64(),
        r.a00.as_f64(),
        r.p01.as_f64(),
        r.d10.as_f64(),
        r.z.as_f64(),
        r.cum_f.as_f64(),
        r.cum_a.as_f64(),
        r.cum_p.as_f64(),
        r.cum_d.as_f64(),
        r.c as f64,
    ]
}

fn csv_line(vals: impl IntoIterator<Item = f64>) -> String {
    let mut line = vals.into_iter().map(fmt_num).collect::<Vec<_>>().join(",");
    line.push('\n');
    line
}

pub fn series_csv<T: Scalar>(rows: &[Row<T>]) -> String {
    let mut out = format!("{SERIES_HEADER}\n");
    for r in rows {
        out.push_str(&csv_line(series_values(r)));
    }
    out
}

pub fn series_json<T: Scalar>(rows: &[Row<T>], config_hash: &str) -> String {
    let columns: Vec<&str> = SERIES_HEADER.split(',').collect();
    let data: Vec<Value> = rows
        .iter()
        .map(|r| Value::from(series_values(r).iter().map(|&v| num(v)).collect::<Vec<_>>()))
        .collect();
    let v = json!({ "columns": columns, "rows": data, "config_hash": config_hash });
    let mut s = serde_json::to_string(&v).expect("serializable");
    s.push('\n');
    s
}

/// Rows of one snapshot, `x_i = i·dx`.
fn snapshot_rows<T: Scalar>(s: &Snapshot<T>, dx: T) -> impl Iterator<Item = Vec<f64>> + '_ {
    let t = s.t.as_f64() * 60.0;
    (0..s.k01.len()).map(move |i| {
        let mut v = vec![
            t,
            (dx * T::from_usize_lossy(i)).as_f64(),
            s.k01[i].as_f64(),
            s.k10[i].as_f64(),
            s.tail01[i].as_f64(),
            s.tail10[i].as_f64(),
        ];
        if let (Some(a), Some(b)) = (&s.h0c, &s.hc0) {
            v.push(a[i].as_f64());
            v.push(b[i].as_f64());
        }
        v
    })
}

pub fn snapshots_header(pooled: bool) -> String {
    if pooled {
        format!("{SNAPSHOT_HEADER},h0c,hc0")
    } else {
        SNAPSHOT_HEADER.to_string()
    }
}

pub fn snapshots_csv<T: Scalar>(snaps: &[Snapshot<T>], dx: T, pooled: bool) -> String {
    let mut out = snapshots_header(pooled);
    out.push('\n');
    for s in snaps {
        for v in snapshot_rows(s, dx) {
            out.push_str(&csv_line(v));
        }
    }
    out
}

pub fn snapshots_json<T: Scalar>(
    snaps: &[Snapshot<T>],
    dx: T,
    pooled: bool,
    config_hash: &str,
) -> String {
    let header = snapshots_header(pooled);
    let columns: Vec<&str> = header.split(',').collect();
    let data: Vec<Value> = snaps
        .iter()
        .flat_map(|s| snapshot_rows(s, dx))
        .map(|v| Value::from(v.into_iter().map(num).collect::<Vec<_>>()))
        .collect();
    let v = json!({ "columns": columns, "rows": data, "config_hash": config_hash });
    let mut s = serde_json::to_string(&v).expect("serializable");
    s.push('\n');
    s
}

/// JSON number carrying the same nine significant digits as the CSV output.
pub fn num(x: f64) -> Value {
    fmt_num(x)
        .parse::<f64>()
        .ok()
        .and_then(serde_json::Number::from_f64)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

pub fn summary_json(s: &Summary, config_hash: &str) -> String {
    let mut m = Map::new();
    if let Some(t) = s.gridlock_time_min {
        m.insert("gridlock_time_min".into(), num(t));
    }
    if let Some(t) = s.t_star_min {
        m.insert("t_star_min".into(), num(t));
    }
    if let Some(a) = s.a_bar_per_h {
        m.insert("a_bar_per_h".into(), num(a));
    }
    m.insert("Z_pax_h".into(), num(s.z_pax_h));
    if let Some(z) = s.zbar_min_per_trip {
        m.insert("zbar_min_per_trip".into(), num(z));
    }
    m.insert("max_rho".into(), num(s.max_rho));
    m.insert("config_hash".into(), Value::String(config_hash.to_string()));
    pretty(&Value::Object(m))
}

pub fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}
