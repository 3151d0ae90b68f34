//! Line-delimited structured records on standard error. No timestamps, so
//! identical runs log identically.

pub fn event(name: &str, fields: &[(&str, &str)]) {
    let mut line = format!("event={name}");
    for (key, value) in fields {
        if value.chars().any(|c| c.is_whitespace() || c == '"') {
            line.push_str(&format!(" {key}={value:?}"));
        } else {
            line.push_str(&format!(" {key}={value}"));
        }
    }
    eprintln!("{line}");
}
