/// Fixed float rendering for tabular output: 17 significant digits, so
/// every value round-trips and repeated runs are byte-identical.
pub(crate) fn float(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    #[test]
    fn round_trips() {
        for x in [0.1, -2.5e-300, 1.0 / 3.0, std::f64::consts::PI * 1e12, 0.0] {
            assert_eq!(super::float(x).parse::<f64>().unwrap(), x);
        }
    }
}
