//! Acceptance suite: one PASS/FAIL line per criterion.

fn main() {
    let reports = seisgrav::verify::run_all(|r| println!("{r}"));
    let passed = reports.iter().filter(|r| r.pass).count();
    println!("{passed} of {} criteria passed", reports.len());
    if passed != reports.len() {
        std::process::exit(1);
    }
}
