//! 256-entry blue → yellow → red lookup table, index 0 is the low end.

pub const COLORMAP: [[u8; 3]; 256] = [
    [0, 0, 255],
    [2, 2, 253],
    [4, 4, 251],
    [6, 6, 249],
    [8, 8, 247],
    [10, 10, 245],
    [12, 12, 243],
    [14, 14, 241],
    [16, 16, 239],
    [18, 18, 237],
    [20, 20, 235],
    [22, 22, 233],
    [24, 24, 231],
    [26, 26, 229],
    [28, 28, 227],
    [30, 30, 225],
    [32, 32, 223],
    [34, 34, 221],
    [36, 36, 219],
    [38, 38, 217],
    [40, 40, 215],
    [42, 42, 213],
    [44, 44, 211],
    [46, 46, 209],
    [48, 48, 207],
    [50, 50, 205],
    [52, 52, 203],
    [54, 54, 201],
    [56, 56, 199],
    [58, 58, 197],
    [60, 60, 195],
    [62, 62, 193],
    [64, 64, 191],
    [66, 66, 189],
    [68, 68, 187],
    [70, 70, 185],
    [72, 72, 183],
    [74, 74, 181],
    [76, 76, 179],
    [78, 78, 177],
    [80, 80, 175],
    [82, 82, 173],
    [84, 84, 171],
    [86, 86, 169],
    [88, 88, 167],
    [90, 90, 165],
    [92, 92, 163],
    [94, 94, 161],
    [96, 96, 159],
    [98, 98, 157],
    [100, 100, 155],
    [102, 102, 153],
    [104, 104, 151],
    [106, 106, 149],
    [108, 108, 147],
    [110, 110, 145],
    [112, 112, 143],
    [114, 114, 141],
    [116, 116, 139],
    [118, 118, 137],
    [120, 120, 135],
    [122, 122, 133],
    [124, 124, 131],
    [126, 126, 129],
    [128, 128, 127],
    [130, 130, 125],
    [132, 132, 123],
    [134, 134, 121],
    [136, 136, 119],
    [138, 138, 117],
    [140, 140, 115],
    [142, 142, 113],
    [144, 144, 111],
    [146, 146, 109],
    [148, 148, 107],
    [150, 150, 105],
    [152, 152, 103],
    [154, 154, 101],
    [156, 156, 99],
    [158, 158, 97],
    [160, 160, 95],
    [162, 162, 93],
    [164, 164, 91],
    [166, 166, 89],
    [168, 168, 87],
    [170, 170, 85],
    [172, 172, 83],
    [174, 174, 81],
    [176, 176, 79],
    [178, 178, 77],
    [180, 180, 75],
    [182, 182, 73],
    [184, 184, 71],
    [186, 186, 69],
    [188, 188, 67],
    [190, 190, 65],
    [192, 192, 63],
    [194, 194, 61],
    [196, 196, 59],
    [198, 198, 57],
    [200, 200, 55],
    [202, 202, 53],
    [204, 204, 51],
    [206, 206, 49],
    [208, 208, 47],
    [210, 210, 45],
    [212, 212, 43],
    [214, 214, 41],
    [216, 216, 39],
    [218, 218, 37],
    [220, 220, 35],
    [222, 222, 33],
    [224, 224, 31],
    [226, 226, 29],
    [228, 228, 27],
    [230, 230, 25],
    [232, 232, 23],
    [234, 234, 21],
    [236, 236, 19],
    [238, 238, 17],
    [240, 240, 15],
    [242, 242, 13],
    [244, 244, 11],
    [246, 246, 9],
    [248, 248, 7],
    [250, 250, 5],
    [252, 252, 3],
    [254, 254, 1],
    [255, 254, 0],
    [255, 252, 0],
    [255, 250, 0],
    [255, 248, 0],
    [255, 246, 0],
    [255, 244, 0],
    [255, 242, 0],
    [255, 240, 0],
    [255, 238, 0],
    [255, 236, 0],
    [255, 234, 0],
    [255, 232, 0],
    [255, 230, 0],
    [255, 228, 0],
    [255, 226, 0],
    [255, 224, 0],
    [255, 222, 0],
    [255, 220, 0],
    [255, 218, 0],
    [255, 216, 0],
    [255, 214, 0],
    [255, 212, 0],
    [255, 210, 0],
    [255, 208, 0],
    [255, 206, 0],
    [255, 204, 0],
    [255, 202, 0],
    [255, 200, 0],
    [255, 198, 0],
    [255, 196, 0],
    [255, 194, 0],
    [255, 192, 0],
    [255, 190, 0],
    [255, 188, 0],
    [255, 186, 0],
    [255, 184, 0],
    [255, 182, 0],
    [255, 180, 0],
    [255, 178, 0],
    [255, 176, 0],
    [255, 174, 0],
    [255, 172, 0],
    [255, 170, 0],
    [255, 168, 0],
    [255, 166, 0],
    [255, 164, 0],
    [255, 162, 0],
    [255, 160, 0],
    [255, 158, 0],
    [255, 156, 0],
    [255, 154, 0],
    [255, 152, 0],
    [255, 150, 0],
    [255, 148, 0],
    [255, 146, 0],
    [255, 144, 0],
    [255, 142, 0],
    [255, 140, 0],
    [255, 138, 0],
    [255, 136, 0],
    [255, 134, 0],
    [255, 132, 0],
    [255, 130, 0],
    [255, 128, 0],
    [255, 126, 0],
    [255, 124, 0],
    [255, 122, 0],
    [255, 120, 0],
    [255, 118, 0],
    [255, 116, 0],
    [255, 114, 0],
    [255, 112, 0],
    [255, 110, 0],
    [255, 108, 0],
    [255, 106, 0],
    [255, 104, 0],
    [255, 102, 0],
    [255, 100, 0],
    [255, 98, 0],
    [255, 96, 0],
    [255, 94, 0],
    [255, 92, 0],
    [255, 90, 0],
    [255, 88, 0],
    [255, 86, 0],
    [255, 84, 0],
    [255, 82, 0],
    [255, 80, 0],
    [255, 78, 0],
    [255, 76, 0],
    [255, 74, 0],
    [255, 72, 0],
    [255, 70, 0],
    [255, 68, 0],
    [255, 66, 0],
    [255, 64, 0],
    [255, 62, 0],
    [255, 60, 0],
    [255, 58, 0],
    [255, 56, 0],
    [255, 54, 0],
    [255, 52, 0],
    [255, 50, 0],
    [255, 48, 0],
    [255, 46, 0],
    [255, 44, 0],
    [255, 42, 0],
    [255, 40, 0],
    [255, 38, 0],
    [255, 36, 0],
    [255, 34, 0],
    [255, 32, 0],
    [255, 30, 0],
    [255, 28, 0],
    [255, 26, 0],
    [255, 24, 0],
    [255, 22, 0],
    [255, 20, 0],
    [255, 18, 0],
    [255, 16, 0],
    [255, 14, 0],
    [255, 12, 0],
    [255, 10, 0],
    [255, 8, 0],
    [255, 6, 0],
    [255, 4, 0],
    [255, 2, 0],
    [255, 0, 0],
];
