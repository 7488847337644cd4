//! Partial reveals served to assigned reviewers.
//!
//! Items are rendered to watermarked images rather than returned as text so
//! a leaked screenshot names the reviewer and the tick it was served at.

use std::io::Cursor;

use font8x8::{UnicodeFonts, BASIC_FONTS};
use image::{GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::domain::{ParticipantId, ScorerRule, TestId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealedItem {
    pub index: u32,
    pub prompt: String,
    pub reference_answer: String,
    pub scorer: ScorerRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealView {
    pub test_id: TestId,
    pub reviewer: ParticipantId,
    pub round: u64,
    pub served_at: u64,
    pub item_count: u32,
    pub items: Vec<RevealedItem>,
}

impl RevealView {
    pub fn watermark(&self) -> String {
        format!("{} t{}", self.reviewer.to_hex(), self.served_at)
    }

    /// One PNG per revealed item.
    pub fn render(&self) -> Vec<Vec<u8>> {
        let mark = self.watermark();
        self.items.iter().map(|it| render_item_png(it, &mark)).collect()
    }
}

const COLS: usize = 72;
const SCALE: u32 = 2;
const GLYPH: u32 = 8 * SCALE;
const MARGIN: u32 = 16;

fn wrap(text: &str, width: usize) -> Vec<String> {
    let mut out = Vec::new();
    for para in text.lines() {
        let mut line = String::new();
        for word in para.split_whitespace() {
            let mut word = word;
            while word.chars().count() > width {
                if !line.is_empty() {
                    out.push(std::mem::take(&mut line));
                }
                let cut = word.char_indices().nth(width).map_or(word.len(), |(i, _)| i);
                out.push(word[..cut].to_string());
                word = &word[cut..];
            }
            if !line.is_empty() && line.chars().count() + 1 + word.chars().count() > width {
                out.push(std::mem::take(&mut line));
            }
            if !line.is_empty() {
                line.push(' ');
            }
            line.push_str(word);
        }
        out.push(line);
    }
    if out.is_empty() {
        out.push(String::new());
    }
    out
}

fn draw_text(img: &mut GrayImage, x0: u32, y0: u32, text: &str, shade: u8) {
    for (i, ch) in text.chars().enumerate() {
        let glyph = BASIC_FONTS.get(ch).or_else(|| BASIC_FONTS.get('?')).unwrap_or([0; 8]);
        let gx = x0 + i as u32 * GLYPH;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8u32 {
                if bits >> col & 1 == 0 {
                    continue;
                }
                for dy in 0..SCALE {
                    for dx in 0..SCALE {
                        let (x, y) = (gx + col * SCALE + dx, y0 + row as u32 * SCALE + dy);
                        if x < img.width() && y < img.height() {
                            img.put_pixel(x, y, Luma([shade]));
                        }
                    }
                }
            }
        }
    }
}

/// Renders one item with a light watermark tiled behind the text.
pub fn render_item_png(item: &RevealedItem, watermark: &str) -> Vec<u8> {
    let mut lines = vec![format!("item {}", item.index), String::new(), "prompt:".to_string()];
    lines.extend(wrap(&item.prompt, COLS));
    lines.push(String::new());
    lines.push("reference:".to_string());
    lines.extend(wrap(&item.reference_answer, COLS));
    lines.push(String::new());
    lines.extend(wrap(&format!("scorer: {:?}", item.scorer), COLS));

    let width = 2 * MARGIN + COLS as u32 * GLYPH;
    let line_h = GLYPH + 4;
    let height = 2 * MARGIN + lines.len() as u32 * line_h;
    let mut img = GrayImage::from_pixel(width, height, Luma([255]));

    let mark_w = watermark.chars().count() as u32 * GLYPH;
    let mut y = 0;
    let mut row = 0u32;
    while y < height {
        let mut x = (row % 2) * mark_w / 2;
        while x < width {
            draw_text(&mut img, x, y, watermark, 225);
            x += mark_w + 4 * GLYPH;
        }
        y += 3 * line_h;
        row += 1;
    }

    for (i, line) in lines.iter().enumerate() {
        draw_text(&mut img, MARGIN, MARGIN + i as u32 * line_h, line, 0);
    }

    let mut out = Vec::new();
    img.write_to(&mut Cursor::new(&mut out), ImageFormat::Png)
        .expect("encoding to memory cannot fail");
    out
}
