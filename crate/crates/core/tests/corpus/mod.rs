use lumactl_core::prompt::{Direction, Scope};

use Direction::{Brighten as B, Darken as D};
use Scope::{Background as Bg, Global as G, Region as R};

/// `(prompt, target, scope, direction, ratio)`
pub const GOLDEN: &[(&str, &str, Scope, Direction, f64)] = &[
    ("Brighten the Majin Buu in this picture just a little.", "Majin Buu", R, B, 0.10),
    ("Increase the brightness of the blackboard by 30%", "blackboard", R, B, 0.30),
    ("darken the whole image by 25%", "", G, D, 0.25),
    ("brighten the lamp a little", "lamp", R, B, 0.10),
    ("Brighten the doll by 10%", "doll", R, B, 0.10),
    ("brighten the circle by 20%", "circle", R, B, 0.20),
    ("brighten the machine by 40%", "machine", R, B, 0.40),
    ("Lighten the red car slightly", "red car", R, B, 0.10),
    ("darken the sky somewhat", "sky", R, D, 0.20),
    ("Darken the background a lot", "", Bg, D, 0.40),
    ("brighten the background by 15%", "", Bg, B, 0.15),
    ("brighten everything", "", G, B, 0.20),
    ("Brighten the picture significantly", "", G, B, 0.40),
    ("dim the street light by 50%", "street light", R, D, 0.50),
    ("Please brighten the face of the child by 35%", "face of the child", R, B, 0.35),
    ("brighten the table moderately", "table", R, B, 0.20),
    ("make the window brighter by 10 percent", "window", R, B, 0.10),
    ("Brighten the dog in the image by 100%", "dog", R, B, 1.00),
    ("brighten the cat by 12.5%", "cat", R, B, 0.125),
    ("darken the whole image a little bit", "", G, D, 0.10),
    ("Reduce the brightness of the monitor by 20%", "monitor", R, D, 0.20),
    ("decrease the brightness of the lamp much", "lamp", R, D, 0.40),
    ("brighten the old wooden door in this photo by 5%", "old wooden door", R, B, 0.05),
    ("illuminate the statue a lot", "statue", R, B, 0.40),
    ("Brighten THE Eiffel Tower by 30%!", "Eiffel Tower", R, B, 0.30),
    ("brighten   the   tree   slightly", "tree", R, B, 0.10),
    ("darken the corner of the room by 45%", "corner of the room", R, D, 0.45),
    ("brighten the person's jacket by 20%", "person's jacket", R, B, 0.20),
    ("brighten the whole image just a little", "", G, B, 0.10),
    ("darken the backdrop by 30%", "", Bg, D, 0.30),
    ("brighten the flowers slightly by 25%", "flowers", R, B, 0.25),
    ("brighten the flowers by 25% slightly", "flowers", R, B, 0.25),
    ("Brighten the river", "river", R, B, 0.20),
    ("brighten the boat by 30 %", "boat", R, B, 0.30),
    ("lighten the shadows on the wall considerably", "shadows on the wall", R, B, 0.40),
    ("brighten the clock in the picture a bit", "clock", R, B, 0.10),
];

/// `(prompt, error kind)`
pub const ERRORS: &[(&str, &str)] = &[
    ("", "empty"),
    ("   ", "empty"),
    ("make it pretty", "no_verb"),
    ("the lamp by 20%", "no_verb"),
    ("brighten", "no_target"),
    ("brighten by 20%", "no_target"),
    ("brighten the lamp by 0%", "ratio_out_of_range"),
    ("brighten the lamp by 150%", "ratio_out_of_range"),
    ("brighten the lamp and darken the sky", "compound"),
    ("brighten the lamp by 20%, then darken the sky", "compound"),
];
