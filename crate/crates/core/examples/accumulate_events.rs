//! Sums a hand-written event stream into a log-change image and shows the
//! coverage mask.
//!
//! `cargo run --example accumulate_events`

use evsplat::event::{accumulate, ContrastThresholds, Event, EventStream, EventWindow, Polarity};

fn main() -> evsplat::Result<()> {
    use Polarity::{Negative, Positive};
    // a bright edge moving right across a 6×3 sensor, a darker pixel behind it
    let events = vec![
        Event::new(100, 1, 1, Positive),
        Event::new(150, 1, 1, Positive),
        Event::new(200, 2, 1, Positive),
        Event::new(250, 1, 1, Negative),
        Event::new(300, 3, 1, Positive),
        Event::new(320, 3, 0, Positive),
        Event::new(350, 0, 2, Negative),
        Event::new(400, 4, 1, Positive),
    ];
    let stream = EventStream::new(events, 6, 3)?;
    let thresholds = ContrastThresholds::new(0.2, 0.3)?;

    for window in [stream.full_window(), EventWindow::new(1, 4)] {
        let acc = accumulate(&stream, window, &thresholds, None)?;
        println!(
            "events {}..={}: {} covered pixels",
            window.start,
            window.end,
            acc.coverage()
        );
        for y in 0..acc.height {
            let row: Vec<String> = (0..acc.width)
                .map(|x| {
                    if acc.covered(x, y) {
                        format!("{:+.2}", acc.value(x, y))
                    } else {
                        "  .  ".to_string()
                    }
                })
                .collect();
            println!("  {}", row.join(" "));
        }
    }
    Ok(())
}
