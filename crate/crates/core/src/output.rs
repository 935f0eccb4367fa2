//! CSV writers shared by the engines and the CLI.

/// Decimal representation with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0.0000000000000000".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (16 - exp).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // log10 can be off by one near powers of ten; re-check the digit count.
    let digits = s.chars().filter(char::is_ascii_digit).collect::<String>();
    let significant = digits.trim_start_matches('0').len();
    if significant > 17 && decimals > 0 {
        let d = decimals - 1;
        format!("{x:.d$}")
    } else {
        s
    }
}

/// Simple CSV builder writing into a string buffer.
#[derive(Debug, Default, Clone)]
pub struct CsvBuilder {
    buf: String,
}

impl CsvBuilder {
    pub fn with_header<S: AsRef<str>>(cols: &[S]) -> Self {
        let mut b = CsvBuilder::default();
        b.raw_row(cols.iter().map(|c| c.as_ref().to_string()));
        b
    }

    pub fn raw_row<I: IntoIterator<Item = String>>(&mut self, cells: I) {
        let mut first = true;
        for c in cells {
            if !first {
                self.buf.push(',');
            }
            first = false;
            self.buf.push_str(&c);
        }
        self.buf.push('\n');
    }

    pub fn push_str_cell_row(&mut self, lead: &[String], nums: &[f64], ints: &[u64]) {
        let mut cells: Vec<String> = lead.to_vec();
        cells.extend(nums.iter().map(|&x| fmt17(x)));
        cells.extend(ints.iter().map(|n| n.to_string()));
        self.raw_row(cells);
    }

    pub fn finish(self) -> String {
        self.buf
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }
}
