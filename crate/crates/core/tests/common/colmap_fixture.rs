//! Small sparse model as hand-written COLMAP text and as binary produced by
//! a writer independent of the library.

use std::path::Path;

pub const CAMERAS_TXT: &str = "\
# Camera list with one line of data per camera:
#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]
# Number of cameras: 2
1 PINHOLE 960 540 700.5 701.25 480 270
2 OPENCV 640 480 500 501 320.5 240.5 -0.1 0.01 0.001 -0.002
";

pub const IMAGES_TXT: &str = "\
# Image list with two lines of data per image:
#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME
#   POINTS2D[] as (X, Y, POINT3D_ID)
# Number of images: 3, mean observations per image: 2
1 1 0 0 0 0 0 0 1 frame_0000.png
10.5 20.25 1 30 40 -1
2 0.9238795325112867 0 0.3826834323650898 0 0.1 -0.2 0.3 1 frame_0001.png
11 21 1 31 41 2
3 0.5 0.5 0.5 0.5 1 2 3 2 frame_0002.png
12 22 2 100 200 3
";

pub const POINTS_TXT: &str = "\
# 3D point list with one line of data per point:
#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)
# Number of points: 3, mean track length: 1.6666666666666667
1 0.5 -0.25 2 255 128 0 0.75 1 0 2 0
2 -1 1 3.5 10 20 30 1.5 2 1
3 0.125 0.0625 4 0 0 255 0.25 3 0 3 1
";

pub struct Cam {
    pub id: u32,
    pub model: i32,
    pub w: u64,
    pub h: u64,
    pub params: Vec<f64>,
}

pub struct Img {
    pub id: u32,
    pub q: [f64; 4],
    pub t: [f64; 3],
    pub cam: u32,
    pub name: &'static str,
    pub obs: Vec<(f64, f64, i64)>,
}

pub struct Pt {
    pub id: u64,
    pub xyz: [f64; 3],
    pub rgb: [u8; 3],
    pub err: f64,
    pub track: Vec<(u32, u32)>,
}

pub fn fixture_records() -> (Vec<Cam>, Vec<Img>, Vec<Pt>) {
    let cams = vec![
        Cam {
            id: 1,
            model: 1,
            w: 960,
            h: 540,
            params: vec![700.5, 701.25, 480.0, 270.0],
        },
        Cam {
            id: 2,
            model: 4,
            w: 640,
            h: 480,
            params: vec![500.0, 501.0, 320.5, 240.5, -0.1, 0.01, 0.001, -0.002],
        },
    ];
    let imgs = vec![
        Img {
            id: 1,
            q: [1.0, 0.0, 0.0, 0.0],
            t: [0.0; 3],
            cam: 1,
            name: "frame_0000.png",
            obs: vec![(10.5, 20.25, 1), (30.0, 40.0, -1)],
        },
        Img {
            id: 2,
            q: [0.9238795325112867, 0.0, 0.3826834323650898, 0.0],
            t: [0.1, -0.2, 0.3],
            cam: 1,
            name: "frame_0001.png",
            obs: vec![(11.0, 21.0, 1), (31.0, 41.0, 2)],
        },
        Img {
            id: 3,
            q: [0.5; 4],
            t: [1.0, 2.0, 3.0],
            cam: 2,
            name: "frame_0002.png",
            obs: vec![(12.0, 22.0, 2), (100.0, 200.0, 3)],
        },
    ];
    let pts = vec![
        Pt {
            id: 1,
            xyz: [0.5, -0.25, 2.0],
            rgb: [255, 128, 0],
            err: 0.75,
            track: vec![(1, 0), (2, 0)],
        },
        Pt {
            id: 2,
            xyz: [-1.0, 1.0, 3.5],
            rgb: [10, 20, 30],
            err: 1.5,
            track: vec![(2, 1)],
        },
        Pt {
            id: 3,
            xyz: [0.125, 0.0625, 4.0],
            rgb: [0, 0, 255],
            err: 0.25,
            track: vec![(3, 0), (3, 1)],
        },
    ];
    (cams, imgs, pts)
}

pub fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}
pub fn put_u64(b: &mut Vec<u8>, v: u64) {
    b.extend_from_slice(&v.to_le_bytes());
}
pub fn put_f64(b: &mut Vec<u8>, v: f64) {
    b.extend_from_slice(&v.to_le_bytes());
}

pub fn binary_files() -> [(String, Vec<u8>); 3] {
    let (cams, imgs, pts) = fixture_records();
    let mut c = Vec::new();
    put_u64(&mut c, cams.len() as u64);
    for cam in &cams {
        put_u32(&mut c, cam.id);
        c.extend_from_slice(&cam.model.to_le_bytes());
        put_u64(&mut c, cam.w);
        put_u64(&mut c, cam.h);
        cam.params.iter().for_each(|p| put_f64(&mut c, *p));
    }
    let mut i = Vec::new();
    put_u64(&mut i, imgs.len() as u64);
    for img in &imgs {
        put_u32(&mut i, img.id);
        img.q.iter().chain(&img.t).for_each(|v| put_f64(&mut i, *v));
        put_u32(&mut i, img.cam);
        i.extend_from_slice(img.name.as_bytes());
        i.push(0);
        put_u64(&mut i, img.obs.len() as u64);
        for (x, y, id) in &img.obs {
            put_f64(&mut i, *x);
            put_f64(&mut i, *y);
            i.extend_from_slice(&id.to_le_bytes());
        }
    }
    let mut p = Vec::new();
    put_u64(&mut p, pts.len() as u64);
    for pt in &pts {
        put_u64(&mut p, pt.id);
        pt.xyz.iter().for_each(|v| put_f64(&mut p, *v));
        p.extend_from_slice(&pt.rgb);
        put_f64(&mut p, pt.err);
        put_u64(&mut p, pt.track.len() as u64);
        for (im, idx) in &pt.track {
            put_u32(&mut p, *im);
            put_u32(&mut p, *idx);
        }
    }
    [("cameras.bin".into(), c), ("images.bin".into(), i), ("points3D.bin".into(), p)]
}

pub fn text_files() -> [(String, Vec<u8>); 3] {
    [
        ("cameras.txt".into(), CAMERAS_TXT.into()),
        ("images.txt".into(), IMAGES_TXT.into()),
        ("points3D.txt".into(), POINTS_TXT.into()),
    ]
}

pub fn write_all(dir: &Path, files: &[(String, Vec<u8>)]) {
    for (name, data) in files {
        std::fs::write(dir.join(name), data).unwrap();
    }
}

