//! Artifact formatting shared by every CSV emitter.

use std::io::Write;

/// 17 significant digits: enough for a lossless f64 round-trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes each line of `text` prefixed with `# `.
pub fn write_comment_block<W: Write>(out: &mut W, text: &str) -> std::io::Result<()> {
    for line in text.lines() {
        if line.is_empty() {
            writeln!(out, "#")?;
        } else {
            writeln!(out, "# {line}")?;
        }
    }
    Ok(())
}

pub fn comment_block(text: &str) -> String {
    let mut buf = Vec::new();
    write_comment_block(&mut buf, text).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("input was UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1.7976931348623157e308, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-').replace('.', "");
            assert_eq!(mantissa.len(), 17);
        }
    }

    #[test]
    fn comment_prefix() {
        assert_eq!(comment_block("a\n\nb = 1"), "# a\n#\n# b = 1\n");
    }
}
