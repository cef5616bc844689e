//! Built-in 5×7 bitmap font for `a`–`z` and `0`–`9`.

pub const GLYPH_WIDTH: usize = 5;
pub const GLYPH_HEIGHT: usize = 7;

type Rows = [&'static str; GLYPH_HEIGHT];

const GLYPHS: [(char, Rows); 36] = [
    (
        'a',
        [
            ".....", ".....", ".###.", "....#", ".####", "#...#", ".####",
        ],
    ),
    (
        'b',
        [
            "#....", "#....", "####.", "#...#", "#...#", "#...#", "####.",
        ],
    ),
    (
        'c',
        [
            ".....", ".....", ".###.", "#....", "#....", "#...#", ".###.",
        ],
    ),
    (
        'd',
        [
            "....#", "....#", ".####", "#...#", "#...#", "#...#", ".####",
        ],
    ),
    (
        'e',
        [
            ".....", ".....", ".###.", "#...#", "#####", "#....", ".###.",
        ],
    ),
    (
        'f',
        [
            "..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#...",
        ],
    ),
    (
        'g',
        [
            ".....", ".####", "#...#", "#...#", ".####", "....#", ".###.",
        ],
    ),
    (
        'h',
        [
            "#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#",
        ],
    ),
    (
        'i',
        [
            ".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###.",
        ],
    ),
    (
        'j',
        [
            "..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##..",
        ],
    ),
    (
        'k',
        [
            "#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#.",
        ],
    ),
    (
        'l',
        [
            "##...", ".#...", ".#...", ".#...", ".#...", ".#...", "..##.",
        ],
    ),
    (
        'm',
        [
            ".....", ".....", "##.#.", "#.#.#", "#.#.#", "#...#", "#...#",
        ],
    ),
    (
        'n',
        [
            ".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#",
        ],
    ),
    (
        'o',
        [
            ".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###.",
        ],
    ),
    (
        'p',
        [
            ".....", "####.", "#...#", "#...#", "####.", "#....", "#....",
        ],
    ),
    (
        'q',
        [
            ".....", ".####", "#...#", "#...#", ".####", "....#", "....#",
        ],
    ),
    (
        'r',
        [
            ".....", ".....", "#.##.", "##..#", "#....", "#....", "#....",
        ],
    ),
    (
        's',
        [
            ".....", ".....", ".####", "#....", ".###.", "....#", "####.",
        ],
    ),
    (
        't',
        [
            ".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##.",
        ],
    ),
    (
        'u',
        [
            ".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#",
        ],
    ),
    (
        'v',
        [
            ".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#..",
        ],
    ),
    (
        'w',
        [
            ".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#.",
        ],
    ),
    (
        'x',
        [
            ".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#",
        ],
    ),
    (
        'y',
        [
            ".....", "#...#", "#...#", "#...#", ".####", "....#", ".###.",
        ],
    ),
    (
        'z',
        [
            ".....", ".....", "#####", "...#.", "..#..", ".#...", "#####",
        ],
    ),
    (
        '0',
        [
            ".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###.",
        ],
    ),
    (
        '1',
        [
            "..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###.",
        ],
    ),
    (
        '2',
        [
            ".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####",
        ],
    ),
    (
        '3',
        [
            "#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###.",
        ],
    ),
    (
        '4',
        [
            "...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#.",
        ],
    ),
    (
        '5',
        [
            "#####", "#....", "####.", "....#", "....#", "#...#", ".###.",
        ],
    ),
    (
        '6',
        [
            "..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###.",
        ],
    ),
    (
        '7',
        [
            "#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#...",
        ],
    ),
    (
        '8',
        [
            ".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###.",
        ],
    ),
    (
        '9',
        [
            ".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##..",
        ],
    ),
];

/// Every character the font can draw, in table order.
pub fn charset() -> impl Iterator<Item = char> {
    GLYPHS.iter().map(|(c, _)| *c)
}

/// Row-major ink mask of `c`, or `None` if the font lacks it.
pub fn glyph(c: char) -> Option<[[bool; GLYPH_WIDTH]; GLYPH_HEIGHT]> {
    let (_, rows) = GLYPHS.iter().find(|(g, _)| *g == c)?;
    let mut out = [[false; GLYPH_WIDTH]; GLYPH_HEIGHT];
    for (r, row) in rows.iter().enumerate() {
        for (x, b) in row.bytes().enumerate() {
            out[r][x] = b == b'#';
        }
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    fn components(mask: &[[bool; GLYPH_WIDTH]; GLYPH_HEIGHT]) -> usize {
        let mut seen = [[false; GLYPH_WIDTH]; GLYPH_HEIGHT];
        let mut n = 0;
        for r in 0..GLYPH_HEIGHT {
            for c in 0..GLYPH_WIDTH {
                if !mask[r][c] || seen[r][c] {
                    continue;
                }
                n += 1;
                let mut stack = vec![(r, c)];
                seen[r][c] = true;
                while let Some((y, x)) = stack.pop() {
                    for dy in -1i32..=1 {
                        for dx in -1i32..=1 {
                            let (ny, nx) = (y as i32 + dy, x as i32 + dx);
                            if ny < 0
                                || nx < 0
                                || ny >= GLYPH_HEIGHT as i32
                                || nx >= GLYPH_WIDTH as i32
                            {
                                continue;
                            }
                            let (ny, nx) = (ny as usize, nx as usize);
                            if mask[ny][nx] && !seen[ny][nx] {
                                seen[ny][nx] = true;
                                stack.push((ny, nx));
                            }
                        }
                    }
                }
            }
        }
        n
    }

    #[test]
    fn rows_are_well_formed() {
        for (c, rows) in GLYPHS {
            for row in rows {
                assert_eq!(row.len(), GLYPH_WIDTH, "{c}");
                assert!(row.bytes().all(|b| b == b'#' || b == b'.'), "{c}");
            }
        }
    }

    #[test]
    fn covers_lowercase_and_digits_once() {
        let chars: Vec<char> = charset().collect();
        let unique: HashSet<char> = chars.iter().copied().collect();
        assert_eq!(chars.len(), 36);
        assert_eq!(unique.len(), 36);
        assert!(('a'..='z').chain('0'..='9').all(|c| unique.contains(&c)));
    }

    #[test]
    fn bitmaps_are_distinct() {
        let all: HashSet<_> = charset().map(|c| glyph(c).unwrap()).collect();
        assert_eq!(all.len(), 36);
    }

    #[test]
    fn every_glyph_is_one_connected_region() {
        for c in charset() {
            assert_eq!(components(&glyph(c).unwrap()), 1, "glyph {c}");
        }
    }

    #[test]
    fn unknown_character() {
        assert!(glyph('A').is_none());
    }
}
