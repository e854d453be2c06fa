//! Length-prefixed JSON frames: encode, reassemble from a split stream, and
//! reject garbage without panicking.

use seaas::protocol::{encode_body, encode_frame, FrameReader, Message};
use seaas::resource::DeviceDescriptor;

fn main() {
    let hello = Message::Hello { device: DeviceDescriptor::full("pixel-7") };
    let hb = Message::Hb { sid: "s1".into() };
    let mut bytes = encode_frame(&hello).unwrap();
    bytes.extend(encode_frame(&hb).unwrap());
    println!("two frames, {} bytes; first body: {}", bytes.len(), String::from_utf8_lossy(&bytes[4..40]));

    // Feed the stream three bytes at a time, as a slow socket might.
    let mut reader = FrameReader::new();
    for chunk in bytes.chunks(3) {
        reader.extend(chunk);
        while let Some(msg) = reader.next_message().unwrap() {
            println!("decoded `{}`", msg.kind());
        }
    }

    let mut junk = FrameReader::new();
    junk.extend(&encode_body(br#"{"t":"teleport"}"#).unwrap());
    println!("unknown type: {}", junk.next_message().unwrap_err());
    junk.extend(&[0, 0, 0, 0]);
    println!("zero length: {}", junk.next_message().unwrap_err());
}
