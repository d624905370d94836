//! Output formatting: 12 significant digits everywhere.

use serde_json::{Map, Value};

/// `x` rounded to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Plain-text rendering of a number with 12 significant digits.
pub fn fmt12(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let r = round12(x);
    let mag = if r == 0.0 {
        0
    } else {
        r.abs().log10().floor() as i32
    };
    if (-5..12).contains(&mag) {
        let decimals = (11 - mag).max(0) as usize;
        let s = format!("{r:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{r:.11e}")
    }
}

/// Rounds every number in a JSON tree to 12 significant digits.
pub fn rounded(v: Value) -> Value {
    match v {
        Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() => serde_json::Number::from_f64(round12(x))
                .map(Value::Number)
                .unwrap_or(Value::Null),
            _ => Value::Number(n),
        },
        Value::Array(a) => Value::Array(a.into_iter().map(rounded).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, rounded(v))).collect()),
        other => other,
    }
}

pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

/// `key: value` lines for a flat JSON object.
pub fn plain(obj: &Map<String, Value>) -> String {
    let mut out = String::new();
    for (k, v) in obj {
        let text = match v {
            Value::Number(n) => n.as_f64().map(fmt12).unwrap_or_else(|| n.to_string()),
            Value::String(s) => s.clone(),
            Value::Array(a) if a.len() > 8 => format!("[{} values]", a.len()),
            other => other.to_string(),
        };
        out += &format!("{k}: {text}\n");
    }
    out
}

pub fn emit(obj: Map<String, Value>, json: bool) {
    let v = rounded(Value::Object(obj));
    if json {
        println!("{}", serde_json::to_string_pretty(&v).expect("json output"));
    } else if let Value::Object(o) = v {
        print!("{}", plain(&o));
    }
}
