//! JSON round-trip for network files: save, reload, bit-exact weights.

use rnn_surgery::json::NetworkFile;
use rnn_surgery::linalg::Mat;
use rnn_surgery::network::{FeedforwardNet, RecurrentNet, RnnLayer};

fn main() {
    let fnn = FeedforwardNet::new(vec![
        (
            Mat::from_rows(&[vec![1.0, -0.5], vec![0.25, 2.0]]),
            vec![0.1, -0.1],
        ),
        (Mat::from_rows(&[vec![1.0, 1.0]]), vec![0.0]),
    ]);
    let dir = std::env::temp_dir().join("rnn-surgery-io-example");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("fnn.json");
    NetworkFile::from_fnn(&fnn).save(&path).unwrap();
    let back = NetworkFile::load(&path).unwrap().into_fnn().unwrap();
    println!("fnn round-trip bit-exact: {}", back == fnn);

    let rnn = RecurrentNet::new(
        Mat::from_rows(&[vec![1.0], vec![-1.0]]),
        vec![RnnLayer {
            a: Mat::identity(2),
            b: Mat::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]),
            c: vec![0.0, 0.1],
        }],
        Mat::from_rows(&[vec![1.0, 1.0]]),
    );
    let path = dir.join("rnn.json");
    NetworkFile::from_rnn(&rnn).save(&path).unwrap();
    let back = NetworkFile::load(&path).unwrap().into_rnn().unwrap();
    println!("rnn round-trip bit-exact: {}", back == rnn);
    println!("files in {}", dir.display());
}
