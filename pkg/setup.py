from setuptools import setup, find_packages

setup(
    name='effdid',
    version='0.1.0',
    packages=find_packages(where='src'),
    package_dir={'': 'src'},
    python_requires='>=3.9',
    install_requires=[
        'numpy>=1.24.0',
        'scipy>=1.10.0',
        'pandas>=1.5.0',
        'pydantic>=2.0.0',
        'click>=8.1.0',
        'python-dotenv>=1.0.0',
        'pyyaml>=6.0',
        'python-json-logger>=2.0.0',
        'tqdm>=4.65.0',
        'matplotlib>=3.7.0',
    ],
    extras_require={
        'dev': [
            'pytest>=7.2.0',
            'pytest-cov>=4.0.0',
            'flake8>=6.0.0',
        ],
    },
    entry_points={
        'console_scripts': ['effdid=effdid.cli:main'],
    },
    description='Doubly robust difference-in-differences with effective treatments and uniform bootstrap bands.',
    long_description=open('README.md').read(),
    long_description_content_type='text/markdown',
)
