//! Closed-form IPG tail for each one-shot setting and interferer mode.

use cv2x::analytic::{analytic_slope, tail, InterfererMode, ReselectionParams, TailModelConfig};
use cv2x::metrics::TailFit;
use cv2x::scheduler::CounterConfig;

fn main() -> cv2x::Result<()> {
    let sps = ReselectionParams::from_counter(&CounterConfig::sps(5, 15, 0.8)).unwrap();
    let oneshots = [
        ("off", None),
        ("2-6", ReselectionParams::from_counter(&CounterConfig::one_shot(2, 6))),
        ("5-15", ReselectionParams::from_counter(&CounterConfig::one_shot(5, 15))),
    ];
    println!("oneshot  mode    P(T>5)     P(T>10)    P(T>20)    P(T>40)    slope");
    for (label, oneshot) in oneshots {
        for mode in [InterfererMode::Single, InterfererMode::Double] {
            let cfg = TailModelConfig {
                sps,
                oneshot,
                p_f: 0.9,
                interferer_mode: mode,
                k_max: 60,
            };
            cfg.validate()?;
            let t = tail(&cfg);
            let at = |k| t.at(k).unwrap();
            println!(
                "{label:<7}  {:<6}  {:.3e}  {:.3e}  {:.3e}  {:.3e}  {:.4}",
                mode.as_str(),
                at(5),
                at(10),
                at(20),
                at(40),
                analytic_slope(&t, &TailFit::new(10, 50))?
            );
        }
    }
    Ok(())
}
