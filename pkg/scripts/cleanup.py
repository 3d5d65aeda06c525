#!/usr/bin/env python3
"""
Cleanup script to clear output folders.
"""

import shutil
from datetime import datetime
from pathlib import Path


def cleanup_outputs():
    """Clean up output folders."""
    base_dir = Path(__file__).parent.parent

    folders_to_clean = [
        base_dir / 'output' / 'logs',
        base_dir / 'output' / 'debug',
    ]

    for folder in folders_to_clean:
        if folder.exists():
            for file in folder.glob('*'):
                if file.is_file() and file.name != 'README.md':
                    file.unlink()
            print(f"🧹 Cleaned: {folder}")

    # Keep result files but move them to backup
    backup_dir = base_dir / 'output' / 'backups'
    timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
    for name in ['results.csv', 'geometry.csv', 'quick_start.csv']:
        result = base_dir / 'output' / name
        if result.exists():
            backup_dir.mkdir(exist_ok=True)
            backup_path = backup_dir / f'{result.stem}_{timestamp}.csv'
            shutil.move(str(result), str(backup_path))
            print(f"📦 Backed up {name} to: {backup_path}")


if __name__ == "__main__":
    cleanup_outputs()
    print("✅ Cleanup complete!")
